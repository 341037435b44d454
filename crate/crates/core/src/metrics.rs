//! COCO-style evaluation: greedy per-image matching, 101-point interpolated
//! AP, averaged over categories then over similarity thresholds. Boxes are
//! matched by IoU, landmark sets by object keypoint similarity (OKS) in two
//! visibility modes.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::error::{Error, Result};
use crate::geometry::{KeypointPrediction, Visibility};
use crate::postprocess::iou;
use crate::scene::{Detection, GroundTruthItem, Scene};

pub const RECALL_POINTS: usize = 101;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisibilityMode {
    VisibleOnly,
    VisibleAndOccluded,
}

impl VisibilityMode {
    fn counts(self, v: Visibility) -> bool {
        match self {
            VisibilityMode::VisibleOnly => v == Visibility::Visible,
            VisibilityMode::VisibleAndOccluded => v.is_labeled(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            VisibilityMode::VisibleOnly => "visible",
            VisibilityMode::VisibleAndOccluded => "visible+occluded",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    /// Landmark mode used for the headline `mAP_pt`; both modes are always reported.
    pub visibility_mode: VisibilityMode,
    pub max_detections_per_image: usize,
}

pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: coco_thresholds(),
            visibility_mode: VisibilityMode::VisibleOnly,
            max_detections_per_image: 100,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thresholds.is_empty() {
            return Err(Error::param("thresholds", "at least one threshold required"));
        }
        if self.thresholds.iter().any(|t| !(*t > 0.0 && *t <= 1.0))
            || self.thresholds.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(Error::param(
                "thresholds",
                format!("{:?} must be strictly increasing within (0,1]", self.thresholds),
            ));
        }
        if self.max_detections_per_image == 0 {
            return Err(Error::param("max_detections_per_image", "must be at least 1"));
        }
        Ok(())
    }
}

/// Mean over counted landmarks of `exp(-d^2 / (2 s^2 k^2))`, with `s^2` the
/// ground-truth box area. `None` when no landmark is counted in `mode`.
pub fn oks(
    pred: &[KeypointPrediction],
    gt: &GroundTruthItem,
    sigmas: &[f64],
    mode: VisibilityMode,
) -> Result<Option<f64>> {
    if pred.len() != gt.landmarks.len() || sigmas.len() != gt.landmarks.len() {
        return Err(Error::Shape(format!(
            "oks: {} predicted landmarks, {} ground truth, {} sigmas",
            pred.len(),
            gt.landmarks.len(),
            sigmas.len()
        )));
    }
    let area = gt.bbox.area() + f64::EPSILON;
    let mut sum = 0.0;
    let mut counted = 0usize;
    for ((p, g), k) in pred.iter().zip(&gt.landmarks).zip(sigmas) {
        if !mode.counts(g.visibility) {
            continue;
        }
        let d2 = (p.x - g.x).powi(2) + (p.y - g.y).powi(2);
        sum += (-d2 / (2.0 * area * k * k)).exp();
        counted += 1;
    }
    Ok((counted > 0).then(|| sum / counted as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MatchLabel {
    TruePositive,
    FalsePositive,
    /// Beyond the per-image detection budget.
    Ignored,
}

/// Greedy matching within one image and category. `similarity[d][g]` is
/// indexed by detections in score-descending order. Each detection takes the
/// unmatched ground truth of highest similarity at or above `threshold`
/// (lowest index on ties).
pub fn match_detections(similarity: &[Vec<f64>], n_gt: usize, threshold: f64, max_detections: usize) -> Vec<MatchLabel> {
    let mut taken = vec![false; n_gt];
    similarity
        .iter()
        .enumerate()
        .map(|(d, row)| {
            if d >= max_detections {
                return MatchLabel::Ignored;
            }
            let mut best: Option<(usize, f64)> = None;
            for (g, &s) in row.iter().enumerate() {
                if taken[g] || s < threshold {
                    continue;
                }
                if best.is_none_or(|(_, bs)| s > bs) {
                    best = Some((g, s));
                }
            }
            match best {
                Some((g, _)) => {
                    taken[g] = true;
                    MatchLabel::TruePositive
                }
                None => MatchLabel::FalsePositive,
            }
        })
        .collect()
}

/// Interpolated precision at the 101 recall points `0, 0.01, ..., 1`.
/// Entries are `(score, is_true_positive)`; ties keep their given order.
pub fn precision_envelope(entries: &[(f64, bool)], n_gt: usize) -> Vec<f64> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    order.sort_by(|&a, &b| entries[b].0.total_cmp(&entries[a].0));
    let mut tp = 0usize;
    let mut recall = Vec::with_capacity(order.len());
    let mut precision = Vec::with_capacity(order.len());
    for (rank, &i) in order.iter().enumerate() {
        if entries[i].1 {
            tp += 1;
        }
        recall.push(if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 });
        precision.push(tp as f64 / (rank + 1) as f64);
    }
    for i in (0..precision.len().saturating_sub(1)).rev() {
        if precision[i + 1] > precision[i] {
            precision[i] = precision[i + 1];
        }
    }
    (0..RECALL_POINTS)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = recall.partition_point(|&rc| rc < r);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect()
}

/// 101-point interpolated AP. With no ground truth: 0 if anything was
/// detected, undefined otherwise.
pub fn average_precision(entries: &[(f64, bool)], n_gt: usize) -> Option<f64> {
    if n_gt == 0 {
        return (!entries.is_empty()).then_some(0.0);
    }
    let env = precision_envelope(entries, n_gt);
    Some(env.iter().sum::<f64>() / RECALL_POINTS as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category_id: u32,
    pub name: String,
    pub n_gt: usize,
    /// Mean over the threshold grid.
    pub ap: Option<f64>,
    pub ap_50: Option<f64>,
    pub ap_75: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApSummary {
    pub map: Option<f64>,
    pub map_50: Option<f64>,
    pub map_75: Option<f64>,
    /// mAP at each threshold of the grid.
    pub per_threshold: Vec<(f64, Option<f64>)>,
    pub per_category: Vec<CategoryAp>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub mode: VisibilityMode,
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
    #[serde(rename = "box")]
    pub bbox: ApSummary,
    pub pt_visible: ApSummary,
    pub pt_all: ApSummary,
}

impl MetricReport {
    pub fn pt(&self, mode: VisibilityMode) -> &ApSummary {
        match mode {
            VisibilityMode::VisibleOnly => &self.pt_visible,
            VisibilityMode::VisibleAndOccluded => &self.pt_all,
        }
    }

    /// Every aggregate and per-category value, for exhaustive comparisons.
    pub fn all_values(&self) -> Vec<Option<f64>> {
        let mut out = Vec::new();
        for s in [&self.bbox, &self.pt_visible, &self.pt_all] {
            out.extend([s.map, s.map_50, s.map_75]);
            out.extend(s.per_threshold.iter().map(|(_, v)| *v));
            for c in &s.per_category {
                out.extend([c.ap, c.ap_50, c.ap_75]);
            }
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Task {
    Box,
    Landmarks(VisibilityMode),
}

/// Per (category, threshold) AP input, accumulated over images.
struct Accumulator {
    entries: Vec<(f64, bool)>,
    n_gt: usize,
}

/// Precision envelopes per category for one task and threshold, for plotting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrCurve {
    pub task: String,
    pub category_id: u32,
    pub threshold: f64,
    pub precision: Vec<f64>,
}

struct Evaluation<'a> {
    scenes: Vec<&'a Scene>,
    detections: Vec<Vec<&'a Detection>>,
    table: &'a CategoryTable,
    config: &'a EvalConfig,
}

impl<'a> Evaluation<'a> {
    fn new(
        detections_by_image: &'a BTreeMap<String, Vec<Detection>>,
        scenes: &'a [Scene],
        table: &'a CategoryTable,
        config: &'a EvalConfig,
    ) -> Result<Self> {
        config.validate()?;
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for (i, s) in scenes.iter().enumerate() {
            if by_id.insert(s.image_id.as_str(), i).is_some() {
                return Err(Error::Scene {
                    image_id: s.image_id.clone(),
                    message: "duplicate image id".into(),
                });
            }
            s.validate(table)?;
        }
        for (id, dets) in detections_by_image {
            if !by_id.contains_key(id.as_str()) {
                return Err(Error::Scene {
                    image_id: id.clone(),
                    message: "detections reference an unknown image id".into(),
                });
            }
            for d in dets {
                let n = table.keypoint_count(d.category_id)?;
                if !d.landmarks.is_empty() && d.landmarks.len() != n {
                    return Err(Error::Scene {
                        image_id: id.clone(),
                        message: format!(
                            "detection of category {} has {} landmarks, expected {n}",
                            d.category_id,
                            d.landmarks.len()
                        ),
                    });
                }
            }
        }
        // canonical image order makes score ties independent of input order
        let mut ordered: Vec<&Scene> = scenes.iter().collect();
        ordered.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let detections = ordered
            .iter()
            .map(|s| {
                let mut d: Vec<&Detection> = detections_by_image
                    .get(&s.image_id)
                    .map(|v| v.iter().collect())
                    .unwrap_or_default();
                d.sort_by(|a, b| b.score.total_cmp(&a.score));
                d
            })
            .collect();
        Ok(Evaluation {
            scenes: ordered,
            detections,
            table,
            config,
        })
    }

    fn accumulate(&self, task: Task, category_id: u32, threshold: f64) -> Result<Accumulator> {
        let slice = self.table.slice(category_id)?;
        let sigmas = &self.table.sigmas()[slice];
        let mut acc = Accumulator {
            entries: Vec::new(),
            n_gt: 0,
        };
        for (scene, dets) in self.scenes.iter().zip(&self.detections) {
            let gts: Vec<&GroundTruthItem> = scene
                .items
                .iter()
                .filter(|g| g.category_id == category_id)
                .collect();
            let dets: Vec<&Detection> = dets
                .iter()
                .copied()
                .filter(|d| d.category_id == category_id)
                .collect();

            let (gts, similarity): (Vec<&GroundTruthItem>, Vec<Vec<f64>>) = match task {
                Task::Box => {
                    let sim = dets
                        .iter()
                        .map(|d| gts.iter().map(|g| iou(&d.bbox, &g.bbox)).collect())
                        .collect();
                    (gts, sim)
                }
                Task::Landmarks(mode) => {
                    let gts: Vec<&GroundTruthItem> = gts
                        .into_iter()
                        .filter(|g| g.landmarks.iter().any(|l| mode.counts(l.visibility)))
                        .collect();
                    let mut sim = Vec::with_capacity(dets.len());
                    for d in &dets {
                        let mut row = Vec::with_capacity(gts.len());
                        for g in &gts {
                            let v = if d.landmarks.is_empty() {
                                0.0
                            } else {
                                oks(&d.landmarks, g, sigmas, mode)?.unwrap_or(0.0)
                            };
                            row.push(v);
                        }
                        sim.push(row);
                    }
                    (gts, sim)
                }
            };
            acc.n_gt += gts.len();
            let labels = match_detections(&similarity, gts.len(), threshold, self.config.max_detections_per_image);
            for (d, label) in dets.iter().zip(labels) {
                match label {
                    MatchLabel::TruePositive => acc.entries.push((d.score, true)),
                    MatchLabel::FalsePositive => acc.entries.push((d.score, false)),
                    MatchLabel::Ignored => {}
                }
            }
        }
        Ok(acc)
    }

    fn summarize(&self, task: Task) -> Result<ApSummary> {
        let grid = &self.config.thresholds;
        let mut thresholds: Vec<f64> = grid.clone();
        for fixed in [0.5, 0.75] {
            if !thresholds.contains(&fixed) {
                thresholds.push(fixed);
            }
        }
        // ap[category][threshold index]
        let mut ap: Vec<(u32, String, usize, Vec<Option<f64>>)> = Vec::new();
        for spec in self.table.specs() {
            let mut row = Vec::with_capacity(thresholds.len());
            let mut n_gt = 0;
            for &t in &thresholds {
                let acc = self.accumulate(task, spec.id, t)?;
                n_gt = acc.n_gt;
                row.push(if acc.n_gt == 0 {
                    None
                } else {
                    average_precision(&acc.entries, acc.n_gt)
                });
            }
            ap.push((spec.id, spec.name.clone(), n_gt, row));
        }
        let idx = |t: f64| thresholds.iter().position(|&x| x == t).expect("threshold present");
        let mean_over_categories = |ti: usize| mean(ap.iter().filter_map(|(_, _, _, row)| row[ti]));

        let per_threshold: Vec<(f64, Option<f64>)> =
            grid.iter().map(|&t| (t, mean_over_categories(idx(t)))).collect();
        let map = if per_threshold.iter().any(|(_, v)| v.is_none()) {
            None
        } else {
            mean(per_threshold.iter().filter_map(|(_, v)| *v))
        };
        let per_category = ap
            .iter()
            .map(|(id, name, n_gt, row)| CategoryAp {
                category_id: *id,
                name: name.clone(),
                n_gt: *n_gt,
                ap: if *n_gt == 0 {
                    None
                } else {
                    mean(grid.iter().filter_map(|&t| row[idx(t)]))
                },
                ap_50: row[idx(0.5)],
                ap_75: row[idx(0.75)],
            })
            .collect();
        Ok(ApSummary {
            map,
            map_50: mean_over_categories(idx(0.5)),
            map_75: mean_over_categories(idx(0.75)),
            per_threshold,
            per_category,
        })
    }

    fn pr_curves(&self, task: Task, label: &str) -> Result<Vec<PrCurve>> {
        let mut out = Vec::new();
        for spec in self.table.specs() {
            for &t in &[0.5, 0.75] {
                let acc = self.accumulate(task, spec.id, t)?;
                if acc.n_gt == 0 {
                    continue;
                }
                out.push(PrCurve {
                    task: label.to_string(),
                    category_id: spec.id,
                    threshold: t,
                    precision: precision_envelope(&acc.entries, acc.n_gt),
                });
            }
        }
        Ok(out)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Scores detections against ground truth. Images without an entry in
/// `detections_by_image` count as having no detections.
pub fn evaluate(
    detections_by_image: &BTreeMap<String, Vec<Detection>>,
    scenes: &[Scene],
    table: &CategoryTable,
    config: &EvalConfig,
) -> Result<MetricReport> {
    let ev = Evaluation::new(detections_by_image, scenes, table, config)?;
    Ok(MetricReport {
        mode: config.visibility_mode,
        images: scenes.len(),
        ground_truths: scenes.iter().map(|s| s.items.len()).sum(),
        detections: detections_by_image.values().map(Vec::len).sum(),
        bbox: ev.summarize(Task::Box)?,
        pt_visible: ev.summarize(Task::Landmarks(VisibilityMode::VisibleOnly))?,
        pt_all: ev.summarize(Task::Landmarks(VisibilityMode::VisibleAndOccluded))?,
    })
}

/// Interpolated precision curves at IoU/OKS 0.50 and 0.75 for every category with ground truth.
pub fn pr_curves(
    detections_by_image: &BTreeMap<String, Vec<Detection>>,
    scenes: &[Scene],
    table: &CategoryTable,
    config: &EvalConfig,
) -> Result<Vec<PrCurve>> {
    let ev = Evaluation::new(detections_by_image, scenes, table, config)?;
    let mut out = ev.pr_curves(Task::Box, "box")?;
    out.extend(ev.pr_curves(Task::Landmarks(config.visibility_mode), "pt")?);
    Ok(out)
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl MetricReport {
    /// Rows mirror the published result tables: one row per metric, landmark
    /// metrics split into visible and visible+occluded.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,subset,value\n");
        let mut row = |metric: &str, subset: &str, v: Option<f64>| {
            let _ = writeln!(out, "{metric},{subset},{}", fmt_value(v));
        };
        row("mAP_box", "box", self.bbox.map);
        row("mAP_box@0.50", "box", self.bbox.map_50);
        row("mAP_box@0.75", "box", self.bbox.map_75);
        for (suffix, pick) in [
            ("", (|s: &ApSummary| s.map) as fn(&ApSummary) -> Option<f64>),
            ("@0.50", |s: &ApSummary| s.map_50),
            ("@0.75", |s: &ApSummary| s.map_75),
        ] {
            row(&format!("mAP_pt{suffix}"), "visible", pick(&self.pt_visible));
            row(&format!("mAP_pt{suffix}"), "visible+occluded", pick(&self.pt_all));
        }
        for (c, (v, a)) in self
            .bbox
            .per_category
            .iter()
            .zip(self.pt_visible.per_category.iter().zip(&self.pt_all.per_category))
        {
            row(&format!("AP_box[{}]", c.name), "box", c.ap);
            row(&format!("AP_pt[{}]", v.name), "visible", v.ap);
            row(&format!("AP_pt[{}]", a.name), "visible+occluded", a.ap);
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn summary(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "undefined".into(), |v| format!("{v:.3}"));
        let pt = self.pt(self.mode);
        let mut s = String::new();
        let _ = writeln!(
            s,
            "images {}  ground truth {}  detections {}",
            self.images, self.ground_truths, self.detections
        );
        let _ = writeln!(s, "mAP_box = {}", f(self.bbox.map));
        let _ = writeln!(s, "mAP_box@0.50 = {}", f(self.bbox.map_50));
        let _ = writeln!(s, "mAP_box@0.75 = {}", f(self.bbox.map_75));
        let _ = writeln!(s, "mAP_pt = {}", f(pt.map));
        let _ = writeln!(s, "mAP_pt@0.50 = {}", f(pt.map_50));
        let _ = writeln!(s, "mAP_pt@0.75 = {}", f(pt.map_75));
        for (mode, p) in [
            (VisibilityMode::VisibleOnly, &self.pt_visible),
            (VisibilityMode::VisibleAndOccluded, &self.pt_all),
        ] {
            let _ = writeln!(
                s,
                "mAP_pt[{}] = {}  @0.50 = {}  @0.75 = {}",
                mode.label(),
                f(p.map),
                f(p.map_50),
                f(p.map_75)
            );
        }
        s
    }
}
