//! Inference-time post-processing: greedy NMS, horizontal-flip fusion in
//! tensor space, and multiscale fusion in detection space.

use ndarray::{s, Array3, ArrayView2, Axis, Zip};

use crate::category::CategoryTable;
use crate::decode::{decode_scene, DecodeConfig};
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, KeypointPrediction};
use crate::scene::Detection;
use crate::tensor::HeadTensorSet;

#[derive(Debug, Clone, PartialEq)]
pub struct FusionConfig {
    pub nms_enabled: bool,
    pub nms_iou_threshold: f64,
    pub flip_enabled: bool,
    pub scales: Vec<f64>,
    /// Weights for (original, flipped) tensors; empty means equal.
    pub weights: Vec<f64>,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            nms_enabled: true,
            nms_iou_threshold: 0.5,
            flip_enabled: true,
            scales: vec![1.0, 0.75],
            weights: Vec::new(),
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nms_iou_threshold > 0.0 && self.nms_iou_threshold < 1.0) {
            return Err(Error::param(
                "nms_iou_threshold",
                format!("{} not in (0,1)", self.nms_iou_threshold),
            ));
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("scales", format!("{:?} must be positive", self.scales)));
        }
        if self.weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::param("weights", format!("{:?} must be positive", self.weights)));
        }
        Ok(())
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Greedy per-category suppression. Detections are visited by score
/// (descending, stable) and kept when their IoU with every kept detection of
/// the same category is below `threshold`. Survivors keep their input order.
pub fn nms(detections: &[Detection], threshold: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| detections[b].score.total_cmp(&detections[a].score));
    let mut keep = vec![false; detections.len()];
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept.iter().any(|&k| {
            detections[k].category_id == d.category_id && iou(&detections[k].bbox, &d.bbox) >= threshold
        });
        if !suppressed {
            keep[i] = true;
            kept.push(i);
        }
    }
    detections
        .iter()
        .zip(keep)
        .filter(|&(_, k)| k)
        .map(|(d, _)| d.clone())
        .collect()
}

#[derive(Clone, Copy)]
enum Mirror {
    Copy,
    /// Fractional x-offset: `dx -> 1 - dx`.
    Complement,
    /// Signed x-displacement: `dx -> -dx`.
    Negate,
}

impl Mirror {
    fn apply(self, v: f64) -> f64 {
        match self {
            Mirror::Copy => v,
            Mirror::Complement => 1.0 - v,
            Mirror::Negate => -v,
        }
    }
}

fn reversed(grid: &Array3<f64>, c: usize) -> ArrayView2<'_, f64> {
    grid.slice(s![c, .., ..;-1])
}

/// Visits every output channel of the mirrored set: tensor index (in
/// `HeadTensorSet::named` order), output channel, the column-reversed source
/// channel and the value map to apply.
fn for_each_mirrored(
    tensors: &HeadTensorSet,
    table: &CategoryTable,
    mut visit: impl FnMut(usize, usize, ArrayView2<f64>, Mirror),
) {
    for (idx, (name, grid)) in tensors.named().into_iter().enumerate() {
        for c in 0..grid.dim().0 {
            match name {
                "kp_heatmap" => {
                    let p = if c < crate::category::NUM_KEYPOINTS { table.flip_partner(c) } else { c };
                    visit(idx, p, reversed(grid, c), Mirror::Copy);
                }
                "kp_offset" => {
                    let g = c / 2;
                    let p = if g < crate::category::NUM_KEYPOINTS { table.flip_partner(g) } else { g };
                    let map = if c % 2 == 0 { Mirror::Negate } else { Mirror::Copy };
                    visit(idx, 2 * p + c % 2, reversed(grid, c), map);
                }
                "center_offset" | "kp_refine_offset" if c == 0 => {
                    visit(idx, c, reversed(grid, c), Mirror::Complement);
                }
                _ => visit(idx, c, reversed(grid, c), Mirror::Copy),
            }
        }
    }
}

/// Maps head tensors of a horizontally mirrored image back to the original
/// frame (and vice versa).
///
/// Columns are mirrored `c -> W-1-c`. Fractional x-offsets become `1 - dx`
/// so sub-cell positions mirror exactly about the image axis; coarse keypoint
/// x-displacements (relative to the refined center) are negated; keypoint
/// channels are swapped along the table's flip pairs. The map is its own
/// inverse bit for bit whenever every fractional x-offset lies on the 2^-53
/// lattice, which holds for all encoder output and all `f32` values above 2^-29.
pub fn flip_tensors(tensors: &HeadTensorSet, table: &CategoryTable) -> HeadTensorSet {
    let mut out = tensors.clone();
    {
        let mut grids = out.named_mut();
        for_each_mirrored(tensors, table, |idx, c, src, map| {
            Zip::from(grids[idx].1.index_axis_mut(Axis(0), c))
                .and(src)
                .for_each(|o, &v| *o = map.apply(v));
        });
    }
    out
}

/// `fuse_tensors(&[plain, &flip_tensors(flipped, table)], weights)` in a single
/// pass, without materializing the unflipped set.
pub fn fuse_with_flipped(
    plain: &HeadTensorSet,
    flipped: &HeadTensorSet,
    weights: [f64; 2],
    table: &CategoryTable,
) -> Result<HeadTensorSet> {
    if !plain.same_shape(flipped) {
        return Err(Error::Shape("flipped view differs in shape or stride from the plain view".into()));
    }
    if weights.iter().any(|&w| w == 0.0) {
        return fuse_tensors(&[plain, &flip_tensors(flipped, table)], &weights);
    }
    check_weights(&weights)?;
    let total = weights[0] + weights[1];
    let (wa, wb) = (weights[0] / total, weights[1] / total);
    let mut out = plain.clone();
    {
        let mut grids = out.named_mut();
        for (_, g) in grids.iter_mut() {
            g.mapv_inplace(|v| wa * v);
        }
        for_each_mirrored(flipped, table, |idx, c, src, map| {
            Zip::from(grids[idx].1.index_axis_mut(Axis(0), c))
                .and(src)
                .for_each(|o, &v| *o += wb * map.apply(v));
        });
    }
    Ok(out)
}

fn check_weights(weights: &[f64]) -> Result<()> {
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::param("weights", format!("{weights:?} must be non-negative")));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::param("weights", "at least one weight must be positive"));
    }
    Ok(())
}

/// Element-wise weighted average; weights are normalized to sum to one.
/// Zero weights are allowed as long as one weight is positive.
pub fn fuse_tensors(sets: &[&HeadTensorSet], weights: &[f64]) -> Result<HeadTensorSet> {
    let Some(first) = sets.first() else {
        return Err(Error::Shape("nothing to fuse".into()));
    };
    if weights.len() != sets.len() {
        return Err(Error::Shape(format!(
            "{} tensor sets but {} weights",
            sets.len(),
            weights.len()
        )));
    }
    check_weights(weights)?;
    let total: f64 = weights.iter().sum();
    for (i, s) in sets.iter().enumerate().skip(1) {
        if !first.same_shape(s) {
            return Err(Error::Shape(format!("tensor set {i} differs in shape or stride from set 0")));
        }
    }
    let norm: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let active: Vec<(&HeadTensorSet, f64)> = sets
        .iter()
        .zip(norm)
        .filter(|(_, w)| *w > 0.0)
        .map(|(s, w)| (*s, w))
        .collect();
    let (lead, lead_w) = active[0];
    let mut out = (*first).clone();
    for (idx, (_, grid)) in out.named_mut().into_iter().enumerate() {
        Zip::from(&mut *grid)
            .and(lead.named()[idx].1)
            .for_each(|o, &v| *o = lead_w * v);
        for &(s, w) in &active[1..] {
            Zip::from(&mut *grid)
                .and(s.named()[idx].1)
                .for_each(|o, &v| *o += w * v);
        }
    }
    Ok(out)
}

/// Maps detections computed on an image resized by `scale` back to original pixels.
pub fn rescale_detections(detections: &[Detection], scale: f64) -> Vec<Detection> {
    if scale == 1.0 {
        return detections.to_vec();
    }
    detections
        .iter()
        .map(|d| Detection {
            category_id: d.category_id,
            score: d.score,
            bbox: BoundingBox {
                x1: d.bbox.x1 / scale,
                y1: d.bbox.y1 / scale,
                x2: d.bbox.x2 / scale,
                y2: d.bbox.y2 / scale,
            },
            landmarks: d
                .landmarks
                .iter()
                .map(|k| KeypointPrediction {
                    x: k.x / scale,
                    y: k.y / scale,
                    confidence: k.confidence,
                })
                .collect(),
        })
        .collect()
}

/// Merges per-scale detection lists (already in original pixels): concatenate,
/// sort by score descending (stable), then suppress with the configured NMS.
pub fn fuse_multiscale(per_scale: &[Vec<Detection>], config: &FusionConfig) -> Vec<Detection> {
    let mut all: Vec<Detection> = per_scale.iter().flatten().cloned().collect();
    all.sort_by(|a, b| b.score.total_cmp(&a.score));
    if config.nms_enabled {
        nms(&all, config.nms_iou_threshold)
    } else {
        all
    }
}

/// Head tensors for one input scale: the plain view and, optionally, the view
/// of the horizontally mirrored image.
#[derive(Debug, Clone)]
pub struct ScaleView {
    pub scale: f64,
    pub tensors: HeadTensorSet,
    pub flipped: Option<HeadTensorSet>,
}

/// Decodes one scale, fusing with the flipped view when enabled, and returns
/// detections in original-image pixels.
pub fn decode_view(
    view: &ScaleView,
    table: &CategoryTable,
    decode: &DecodeConfig,
    fusion: &FusionConfig,
) -> Result<Vec<Detection>> {
    let detections = match (&view.flipped, fusion.flip_enabled) {
        (Some(flipped), true) => {
            let weights = match *fusion.weights.as_slice() {
                [] => [1.0, 1.0],
                [a, b] => [a, b],
                ref w => return Err(Error::Shape(format!("flip fusion takes 2 weights, got {}", w.len()))),
            };
            let fused = fuse_with_flipped(&view.tensors, flipped, weights, table)?;
            decode_scene(&fused, table, decode)?
        }
        _ => decode_scene(&view.tensors, table, decode)?,
    };
    Ok(rescale_detections(&detections, view.scale))
}

/// Runs the configured strategy over the views whose scale is listed in
/// `fusion.scales`.
pub fn run_strategy(
    views: &[ScaleView],
    table: &CategoryTable,
    decode: &DecodeConfig,
    fusion: &FusionConfig,
) -> Result<Vec<Detection>> {
    fusion.validate()?;
    let per_scale = views
        .iter()
        .filter(|v| fusion.scales.iter().any(|s| (s - v.scale).abs() < 1e-9))
        .map(|v| decode_view(v, table, decode, fusion))
        .collect::<Result<Vec<_>>>()?;
    Ok(fuse_multiscale(&per_scale, fusion))
}
