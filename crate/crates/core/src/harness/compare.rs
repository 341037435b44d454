//! Post-processing strategy study on noisy synthetic head outputs.
//!
//! Clean targets are perturbed per view the way a trained head errs:
//! regression jitter, peak heights that drop with localization error,
//! occasional weak peaks, and lower-scored duplicate peaks a few cells from
//! the true center. Each strategy (none / NMS / +flip / +multiscale) is then
//! decoded and evaluated on the same data.

use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Axis;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::decode::DecodeConfig;
use crate::encode::{cell_and_fraction, encode_scene, EncodeParams};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig};
use crate::postprocess::{run_strategy, FusionConfig, ScaleView};
use crate::scene::{Detection, Scene};
use crate::tensor::HeadTensorSet;

use super::synth::{synth_scenes, SynthParams};
use super::with_workers;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Std. dev. of the center offset error, cells.
    pub center_jitter: f64,
    /// Relative std. dev. of the size error.
    pub size_jitter: f64,
    /// Std. dev. of the coarse keypoint offset error, cells.
    pub keypoint_jitter: f64,
    /// Std. dev. of the keypoint refine offset error, cells.
    pub refine_jitter: f64,
    pub weak_prob: f64,
    /// Peak height multiplier for weak objects.
    pub weak_scale: f64,
    pub duplicate_prob: f64,
    /// Duplicate peak height relative to the object's peak.
    pub duplicate_scale: f64,
    /// Distance of the duplicate from the true center, cells.
    pub duplicate_shift: usize,
}

impl Default for NoiseParams {
    fn default() -> Self {
        NoiseParams {
            center_jitter: 0.35,
            size_jitter: 0.08,
            keypoint_jitter: 0.6,
            refine_jitter: 0.2,
            weak_prob: 0.15,
            weak_scale: 0.2,
            duplicate_prob: 0.5,
            duplicate_scale: 0.7,
            duplicate_shift: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareParams {
    pub synth: SynthParams,
    pub noise: NoiseParams,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub nms_iou_threshold: f64,
    pub extra_scale: f64,
    pub timing: bool,
    pub workers: usize,
}

impl Default for CompareParams {
    fn default() -> Self {
        CompareParams {
            synth: SynthParams {
                images: 100,
                box_min: 40.0,
                box_max: 64.0,
                ..SynthParams::default()
            },
            noise: NoiseParams::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            nms_iou_threshold: 0.5,
            extra_scale: 0.75,
            timing: false,
            workers: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyColumn {
    pub nms: bool,
    pub flip: bool,
    pub multiscale: bool,
    pub map_box: Option<f64>,
    pub map_pt: Option<f64>,
    /// Mean decode + post-processing time per image.
    pub time_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTable {
    pub columns: Vec<StrategyColumn>,
}

impl StrategyTable {
    /// Both mAP rows are non-decreasing from left to right.
    pub fn is_monotonic(&self) -> bool {
        let rows = [
            self.columns.iter().map(|c| c.map_box).collect::<Vec<_>>(),
            self.columns.iter().map(|c| c.map_pt).collect::<Vec<_>>(),
        ];
        rows.iter().all(|row| {
            row.windows(2).all(|w| match (w[0], w[1]) {
                (Some(a), Some(b)) => b >= a,
                _ => false,
            })
        })
    }

    pub fn to_text(&self) -> String {
        let mark = |b: bool| if b { "x" } else { "-" };
        let val = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.3}"));
        let mut rows: Vec<(String, Vec<String>)> = vec![
            ("NMS".into(), self.columns.iter().map(|c| mark(c.nms).into()).collect()),
            ("Flip".into(), self.columns.iter().map(|c| mark(c.flip).into()).collect()),
            ("Multiscale".into(), self.columns.iter().map(|c| mark(c.multiscale).into()).collect()),
            ("mAP_box".into(), self.columns.iter().map(|c| val(c.map_box)).collect()),
            ("mAP_pt".into(), self.columns.iter().map(|c| val(c.map_pt)).collect()),
        ];
        if self.columns.iter().all(|c| c.time_ms.is_some()) {
            rows.push((
                "Time, ms".into(),
                self.columns.iter().map(|c| format!("{:.2}", c.time_ms.unwrap())).collect(),
            ));
        }
        let mut out = String::new();
        for (name, cells) in rows {
            out.push_str(&format!("{name:<12}"));
            for c in cells {
                out.push_str(&format!(" {c:>9}"));
            }
            out.push('\n');
        }
        out.push_str(&format!("monotonic: {}\n", self.is_monotonic()));
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("nms,flip,multiscale,mAP_box,mAP_pt,time_ms\n");
        let val = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.6}"));
        for c in &self.columns {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.nms,
                c.flip,
                c.multiscale,
                val(c.map_box),
                val(c.map_pt),
                val(c.time_ms)
            ));
        }
        out
    }
}

/// The four cumulative strategies of the comparison.
pub fn strategies(nms_iou_threshold: f64, extra_scale: f64) -> Vec<FusionConfig> {
    let base = FusionConfig {
        nms_enabled: false,
        nms_iou_threshold,
        flip_enabled: false,
        scales: vec![1.0],
        weights: Vec::new(),
    };
    vec![
        base.clone(),
        FusionConfig {
            nms_enabled: true,
            ..base.clone()
        },
        FusionConfig {
            nms_enabled: true,
            flip_enabled: true,
            ..base.clone()
        },
        FusionConfig {
            nms_enabled: true,
            flip_enabled: true,
            scales: vec![1.0, extra_scale],
            ..base
        },
    ]
}

/// Clean targets for `scene` with the configured errors injected. `scale` is
/// the resize factor of the view, so that jitter and peak height track
/// localization error in original-image pixels. `artifacts[i]` holds the
/// systematic errors of item `i`.
pub fn noisy_tensors(
    scene: &Scene,
    table: &CategoryTable,
    encode: &EncodeParams,
    noise: &NoiseParams,
    scale: f64,
    artifacts: &[Artifact],
    rng: &mut ChaCha8Rng,
) -> Result<HeadTensorSet> {
    let mut t = encode_scene(scene, table, encode)?;
    let r = encode.stride as f64;
    let (h, w) = (t.height(), t.width());
    let std = |s: f64| Normal::new(0.0, s * scale).map_err(|e| Error::param("noise", e.to_string()));
    let center_n = std(noise.center_jitter)?;
    let size_n = std(noise.size_jitter)?;
    let kp_n = std(noise.keypoint_jitter)?;
    let refine_n = std(noise.refine_jitter)?;

    let cells: Vec<(usize, usize)> = scene
        .items
        .iter()
        .map(|it| {
            let (cx, cy) = it.bbox.center();
            (cell_and_fraction(cy / r, h).0, cell_and_fraction(cx / r, w).0)
        })
        .collect();

    for ((item, &(row, col)), artifact) in scene.items.iter().zip(&cells).zip(artifacts) {
        let channel = (item.category_id - 1) as usize;
        let ex = center_n.sample(rng);
        let ey = center_n.sample(rng);
        t.center_offset[[0, row, col]] += ex;
        t.center_offset[[1, row, col]] += ey;
        for c in 0..2 {
            t.wh[[c, row, col]] *= (1.0 + size_n.sample(rng)).max(0.1);
        }
        for g in table.slice(item.category_id)? {
            t.kp_offset[[2 * g, row, col]] += kp_n.sample(rng);
            t.kp_offset[[2 * g + 1, row, col]] += kp_n.sample(rng);
        }
        for l in item.landmarks.iter().filter(|l| l.visibility.is_labeled()) {
            let kr = cell_and_fraction(l.y / r, h).0;
            let kc = cell_and_fraction(l.x / r, w).0;
            t.kp_refine_offset[[0, kr, kc]] += refine_n.sample(rng);
            t.kp_refine_offset[[1, kr, kc]] += refine_n.sample(rng);
        }

        let spread = 2.0 * (noise.center_jitter * scale).powi(2);
        let quality = if spread > 0.0 { (-(ex * ex + ey * ey) / spread).exp() } else { 1.0 };
        let mut height = 0.6 + 0.4 * quality;
        if artifact.weak {
            height *= noise.weak_scale;
        }
        let radius = encode.center_radius(&item.bbox).max(1) as usize;
        let mut grid = t.center.index_axis_mut(Axis(0), channel);
        for rr in row.saturating_sub(radius)..=(row + radius).min(h - 1) {
            for cc in col.saturating_sub(radius)..=(col + radius).min(w - 1) {
                grid[[rr, cc]] *= height;
            }
        }

        let Some((dr, dc)) = artifact.duplicate else {
            continue;
        };
        let (drow, dcol) = (row as isize + dr, col as isize + dc);
        if drow < 0 || dcol < 0 || drow >= h as isize || dcol >= w as isize {
            continue;
        }
        let (drow, dcol) = (drow as usize, dcol as usize);
        if cells.contains(&(drow, dcol)) {
            continue;
        }
        let value = noise.duplicate_scale * height;
        for rr in drow.saturating_sub(1)..=(drow + 1).min(h - 1) {
            for cc in dcol.saturating_sub(1)..=(dcol + 1).min(w - 1) {
                if (rr, cc) != (row, col) {
                    grid[[rr, cc]] = grid[[rr, cc]].min(0.5 * value);
                }
            }
        }
        grid[[drow, dcol]] = value;
        for c in 0..2 {
            t.wh[[c, drow, dcol]] = t.wh[[c, row, col]];
            t.center_offset[[c, drow, dcol]] = t.center_offset[[c, row, col]];
        }
        for g in table.slice(item.category_id)? {
            t.kp_offset[[2 * g, drow, dcol]] = t.kp_offset[[2 * g, row, col]];
            t.kp_offset[[2 * g + 1, drow, dcol]] = t.kp_offset[[2 * g + 1, row, col]];
        }
    }
    Ok(t)
}

/// Systematic errors of one object in one view: a lowered peak and an extra
/// peak displaced by `(rows, cols)` cells.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Artifact {
    pub weak: bool,
    pub duplicate: Option<(isize, isize)>,
}

impl Artifact {
    pub fn draw(noise: &NoiseParams, rng: &mut ChaCha8Rng) -> Self {
        let weak = rng.gen_bool(noise.weak_prob);
        let shift = noise.duplicate_shift as isize;
        let duplicate = rng.gen_bool(noise.duplicate_prob).then(|| match rng.gen_range(0..4) {
            0 => (0, shift),
            1 => (0, -shift),
            2 => (shift, 0),
            _ => (-shift, 0),
        });
        Artifact { weak, duplicate }
    }

    pub fn mirrored(self) -> Self {
        Artifact {
            duplicate: self.duplicate.map(|(r, c)| (r, -c)),
            ..self
        }
    }
}

/// Noisy views of one scene at scale 1 and `extra_scale`, each with a flipped
/// companion. Regression noise is independent per view; artifacts are drawn
/// per scale and mirrored into the flipped view.
pub fn noisy_views(
    scene: &Scene,
    table: &CategoryTable,
    encode: &EncodeParams,
    noise: &NoiseParams,
    extra_scale: f64,
    seed: u64,
    index: usize,
) -> Result<Vec<ScaleView>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7ab1e);
    rng.set_stream(index as u64);
    [1.0, extra_scale]
        .into_iter()
        .map(|scale| {
            let scaled = if scale == 1.0 { scene.clone() } else { scene.scaled(scale) };
            let artifacts: Vec<Artifact> = scene.items.iter().map(|_| Artifact::draw(noise, &mut rng)).collect();
            let tensors = noisy_tensors(&scaled, table, encode, noise, scale, &artifacts, &mut rng)?;
            let mirrored = scaled.mirrored(table)?;
            let mirrored_artifacts: Vec<Artifact> = artifacts.iter().map(|a| a.mirrored()).collect();
            let flipped = noisy_tensors(&mirrored, table, encode, noise, scale, &mirrored_artifacts, &mut rng)?;
            Ok(ScaleView {
                scale,
                tensors,
                flipped: Some(flipped),
            })
        })
        .collect()
}

pub fn compare_strategies(params: &CompareParams, table: &CategoryTable) -> Result<StrategyTable> {
    let synth = SynthParams {
        view_scales: vec![1.0, params.extra_scale],
        ..params.synth.clone()
    };
    let scenes = synth_scenes(&synth, table)?;
    let seed = params.synth.seed;
    let views: Vec<Vec<ScaleView>> = with_workers(params.workers, || {
        scenes
            .par_iter()
            .enumerate()
            .map(|(i, s)| noisy_views(s, table, &params.synth.encode, &params.noise, params.extra_scale, seed, i))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut columns = Vec::new();
    for fusion in strategies(params.nms_iou_threshold, params.extra_scale) {
        let start = Instant::now();
        let per_image: Vec<Vec<Detection>> = with_workers(params.workers, || {
            views
                .par_iter()
                .map(|v| run_strategy(v, table, &params.decode, &fusion))
                .collect::<Result<Vec<_>>>()
        })??;
        let elapsed = start.elapsed().as_secs_f64() * 1e3 / scenes.len().max(1) as f64;
        let detections: BTreeMap<String, Vec<Detection>> = scenes
            .iter()
            .map(|s| s.image_id.clone())
            .zip(per_image)
            .collect();
        let report = evaluate(&detections, &scenes, table, &params.eval)?;
        columns.push(StrategyColumn {
            nms: fusion.nms_enabled,
            flip: fusion.flip_enabled,
            multiscale: fusion.scales.len() > 1,
            map_box: report.bbox.map,
            map_pt: report.pt(params.eval.visibility_mode).map,
            time_ms: params.timing.then_some(elapsed),
        });
    }
    Ok(StrategyTable { columns })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_cumulative_strategies() {
        let s = strategies(0.5, 0.75);
        assert_eq!(s.len(), 4);
        assert!(!s[0].nms_enabled && s[1].nms_enabled && !s[1].flip_enabled);
        assert!(s[2].flip_enabled && s[2].scales == [1.0]);
        assert_eq!(s[3].scales, [1.0, 0.75]);
    }

    #[test]
    fn zero_noise_views_match_clean_targets() {
        let table = CategoryTable::default();
        let scene = super::super::synth::synth_scene(&SynthParams::default(), &table, 1);
        let noise = NoiseParams {
            center_jitter: 0.0,
            size_jitter: 0.0,
            keypoint_jitter: 0.0,
            refine_jitter: 0.0,
            weak_prob: 0.0,
            duplicate_prob: 0.0,
            ..NoiseParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = EncodeParams::default();
        let artifacts = vec![Artifact::default(); scene.items.len()];
        let t = noisy_tensors(&scene, &table, &enc, &noise, 1.0, &artifacts, &mut rng).unwrap();
        assert_eq!(t, encode_scene(&scene, &table, &enc).unwrap());
    }

    #[test]
    fn mirrored_artifact_flips_column_shift() {
        let a = Artifact {
            weak: true,
            duplicate: Some((0, 2)),
        };
        assert_eq!(a.mirrored().duplicate, Some((0, -2)));
        assert!(a.mirrored().weak);
        assert_eq!(a.mirrored().mirrored(), a);
    }

    #[test]
    fn small_study_runs() {
        let table = CategoryTable::default();
        let params = CompareParams {
            synth: SynthParams {
                images: 8,
                ..CompareParams::default().synth
            },
            ..CompareParams::default()
        };
        let t = compare_strategies(&params, &table).unwrap();
        assert_eq!(t.columns.len(), 4);
        assert!(t.to_text().contains("mAP_box"));
        assert_eq!(t.to_csv().lines().count(), 5);
    }
}
