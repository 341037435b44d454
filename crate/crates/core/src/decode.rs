//! Head tensors to detections.
//!
//! Center peaks give category, score and the object cell; size and center
//! offset are read at that cell. Each keypoint starts at a coarse position
//! regressed from the object center and is then replaced by the nearest
//! refined candidate (keypoint heatmap peak plus refine offset) that lies
//! inside the object's box.

use std::cmp::Ordering;

use ndarray::{Array3, ArrayView2, ArrayView3, Axis};

use crate::category::CategoryTable;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, KeypointPrediction};
use crate::scene::Detection;
use crate::tensor::{
    validate_shapes, HeadTensorSet, TensorIssue, CENTER, CENTER_OFFSET, KP_HEATMAP, KP_OFFSET, KP_REFINE_OFFSET, WH,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    pub top_k: usize,
    pub min_center_score: f64,
    pub min_kp_candidate_score: f64,
    /// Box expansion factor used when deciding which candidates a detection may claim.
    pub snap_box_margin: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            top_k: 100,
            min_center_score: 0.0,
            min_kp_candidate_score: 0.1,
            snap_box_margin: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_k < 1 {
            return Err(Error::param("top_k", "must be at least 1"));
        }
        for (name, v) in [
            ("min_center_score", self.min_center_score),
            ("min_kp_candidate_score", self.min_kp_candidate_score),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("{v} not in [0,1]")));
            }
        }
        if !(self.snap_box_margin >= 1.0 && self.snap_box_margin.is_finite()) {
            return Err(Error::param(
                "snap_box_margin",
                format!("{} must be >= 1", self.snap_box_margin),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub channel: usize,
    pub row: usize,
    pub col: usize,
    pub score: f64,
}

/// Refined keypoint candidate, in cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Candidate {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub row: usize,
    pub col: usize,
}

/// A decoded object center before keypoints are attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedCenter {
    pub peak: Peak,
    /// Refined center, cells.
    pub x: f64,
    pub y: f64,
    /// Box in cells.
    pub bbox: BoundingBox,
}

/// Local-maximum test with row-major tie-breaking: the cell must be strictly
/// greater than neighbors that precede it and no smaller than the rest.
#[inline]
fn is_peak(data: &[f64], h: usize, w: usize, row: usize, col: usize) -> bool {
    let v = data[row * w + col];
    let r0 = row.saturating_sub(1);
    let r1 = (row + 1).min(h - 1);
    let c0 = col.saturating_sub(1);
    let c1 = (col + 1).min(w - 1);
    for r in r0..=r1 {
        let line = &data[r * w..r * w + w];
        for c in c0..=c1 {
            if r == row && c == col {
                continue;
            }
            let n = line[c];
            let precedes = r < row || (r == row && c < col);
            if (precedes && n >= v) || n > v {
                return false;
            }
        }
    }
    true
}

/// Emits every peak at or above `min_score` in row-major order and returns
/// the first non-finite cell, if any.
fn channel_peaks(
    grid: ArrayView2<f64>,
    min_score: f64,
    mut emit: impl FnMut(usize, usize, f64),
) -> Option<(usize, usize)> {
    let (h, w) = grid.dim();
    if h == 0 || w == 0 {
        return None;
    }
    let owned;
    let data = match grid.as_slice() {
        Some(s) => s,
        None => {
            owned = grid.iter().copied().collect::<Vec<_>>();
            &owned
        }
    };
    let mut bad = None;
    for row in 0..h {
        let line = &data[row * w..row * w + w];
        let hot = line
            .iter()
            .fold(false, |acc, &v| acc | !(v < min_score) | (v == f64::NEG_INFINITY));
        if !hot {
            continue;
        }
        for (col, &v) in line.iter().enumerate() {
            if !(v >= min_score) || v == f64::INFINITY {
                if !v.is_finite() && bad.is_none() {
                    bad = Some((row, col));
                }
                continue;
            }
            if is_peak(data, h, w, row, col) {
                emit(row, col, v);
            }
        }
    }
    bad
}

fn peak_order(a: &Peak, b: &Peak) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.channel.cmp(&b.channel))
        .then(a.row.cmp(&b.row))
        .then(a.col.cmp(&b.col))
}

/// Top `k` local maxima across all channels with score at least `min_score`,
/// sorted by score descending, ties by `(channel, row, col)`.
/// Non-finite cells are skipped.
pub fn extract_peaks(heatmaps: ArrayView3<f64>, k: usize, min_score: f64) -> Vec<Peak> {
    scan_peaks(heatmaps, k, min_score).0
}

/// Peaks plus the first non-finite `(channel, row, col)`.
fn scan_peaks(heatmaps: ArrayView3<f64>, k: usize, min_score: f64) -> (Vec<Peak>, Option<(usize, usize, usize)>) {
    let mut peaks = Vec::new();
    let mut bad = None;
    for (channel, grid) in heatmaps.axis_iter(Axis(0)).enumerate() {
        let found = channel_peaks(grid, min_score, |row, col, score| {
            peaks.push(Peak {
                channel,
                row,
                col,
                score,
            })
        });
        if bad.is_none() {
            bad = found.map(|(r, c)| (channel, r, c));
        }
    }
    (select_top(peaks, k), bad)
}

fn select_top(mut peaks: Vec<Peak>, k: usize) -> Vec<Peak> {
    if k == 0 {
        return Vec::new();
    }
    if peaks.len() > k {
        peaks.select_nth_unstable_by(k - 1, peak_order);
        peaks.truncate(k);
    }
    peaks.sort_by(peak_order);
    peaks
}

fn non_finite(tensor: &'static str, channel: usize, row: usize, col: usize) -> Error {
    Error::Validation(vec![TensorIssue::NonFinite {
        tensor,
        channel,
        row,
        col,
    }])
}

/// Reads one value, rejecting non-finite entries.
fn read(grid: &Array3<f64>, tensor: &'static str, channel: usize, row: usize, col: usize) -> Result<f64> {
    let v = grid[[channel, row, col]];
    if v.is_finite() {
        Ok(v)
    } else {
        Err(non_finite(tensor, channel, row, col))
    }
}

fn center_from_peak(tensors: &HeadTensorSet, peak: Peak) -> Result<DecodedCenter> {
    let (r, c) = (peak.row, peak.col);
    let x = c as f64 + read(&tensors.center_offset, CENTER_OFFSET, 0, r, c)?;
    let y = r as f64 + read(&tensors.center_offset, CENTER_OFFSET, 1, r, c)?;
    let w = read(&tensors.wh, WH, 0, r, c)?.max(0.0);
    let h = read(&tensors.wh, WH, 1, r, c)?.max(0.0);
    Ok(DecodedCenter {
        peak,
        x,
        y,
        bbox: BoundingBox {
            x1: x - w / 2.0,
            y1: y - h / 2.0,
            x2: x + w / 2.0,
            y2: y + h / 2.0,
        },
    })
}

fn decode_centers(tensors: &HeadTensorSet, config: &DecodeConfig) -> Result<Vec<DecodedCenter>> {
    let (peaks, bad) = scan_peaks(tensors.center.view(), config.top_k, config.min_center_score);
    if let Some((ch, r, c)) = bad {
        return Err(non_finite(CENTER, ch, r, c));
    }
    peaks.into_iter().map(|p| center_from_peak(tensors, p)).collect()
}

fn to_pixels(bbox: &BoundingBox, stride: f64) -> BoundingBox {
    bbox.scaled(stride)
}

/// Boxes only; landmarks are left empty.
pub fn decode_detections(tensors: &HeadTensorSet, config: &DecodeConfig) -> Result<Vec<Detection>> {
    let stride = tensors.stride as f64;
    Ok(decode_centers(tensors, config)?
        .into_iter()
        .map(|c| Detection {
            category_id: c.peak.channel as u32 + 1,
            score: c.peak.score.clamp(0.0, 1.0),
            bbox: to_pixels(&c.bbox, stride),
            landmarks: Vec::new(),
        })
        .collect())
}

/// Coarse keypoint positions (cells): the refined center plus the keypoint
/// offsets read at the center's peak cell.
pub fn decode_coarse_keypoints(
    tensors: &HeadTensorSet,
    table: &CategoryTable,
    center: &DecodedCenter,
    category_id: u32,
) -> Result<Vec<(f64, f64)>> {
    let (r, c) = (center.peak.row, center.peak.col);
    table
        .slice(category_id)?
        .map(|g| {
            Ok((
                center.x + read(&tensors.kp_offset, KP_OFFSET, 2 * g, r, c)?,
                center.y + read(&tensors.kp_offset, KP_OFFSET, 2 * g + 1, r, c)?,
            ))
        })
        .collect()
}

/// Per global keypoint channel: heatmap peaks above the candidate threshold,
/// refined by the shared refine offsets. Lists are in row-major order.
pub fn extract_keypoint_candidates(tensors: &HeadTensorSet, config: &DecodeConfig) -> Result<Vec<Vec<Candidate>>> {
    tensors
        .kp_heatmap
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(g, grid)| {
            let mut out = Vec::new();
            let bad = channel_peaks(grid, config.min_kp_candidate_score, |row, col, score| {
                out.push((row, col, score))
            });
            if let Some((r, c)) = bad {
                return Err(non_finite(KP_HEATMAP, g, r, c));
            }
            out.into_iter()
                .map(|(row, col, score)| {
                    Ok(Candidate {
                        x: col as f64 + read(&tensors.kp_refine_offset, KP_REFINE_OFFSET, 0, row, col)?,
                        y: row as f64 + read(&tensors.kp_refine_offset, KP_REFINE_OFFSET, 1, row, col)?,
                        confidence: score.clamp(0.0, 1.0),
                        row,
                        col,
                    })
                })
                .collect()
        })
        .collect()
}

/// Replaces each coarse position with the closest candidate of the same
/// keypoint lying inside `box_cells` expanded by the configured margin.
/// Ties go to higher confidence, then row-major order. Keypoints without an
/// eligible candidate keep their coarse position with confidence 0.
pub fn snap_keypoints<C: AsRef<[Candidate]>>(
    coarse: &[(f64, f64)],
    candidates: &[C],
    box_cells: &BoundingBox,
    config: &DecodeConfig,
) -> Vec<KeypointPrediction> {
    let region = box_cells.expanded(config.snap_box_margin);
    coarse
        .iter()
        .zip(candidates)
        .map(|(&(cx, cy), cands)| {
            let best = cands
                .as_ref()
                .iter()
                .filter(|k| region.contains(k.x, k.y))
                .map(|k| ((k.x - cx).powi(2) + (k.y - cy).powi(2), k))
                .min_by(|(da, a), (db, b)| {
                    da.total_cmp(db)
                        .then(b.confidence.total_cmp(&a.confidence))
                        .then((a.row, a.col).cmp(&(b.row, b.col)))
                });
            match best {
                Some((_, k)) => KeypointPrediction {
                    x: k.x,
                    y: k.y,
                    confidence: k.confidence,
                },
                None => KeypointPrediction {
                    x: cx,
                    y: cy,
                    confidence: 0.0,
                },
            }
        })
        .collect()
}

/// Full decode: scored boxes with landmarks, in pixels, sorted by score
/// descending. Shapes are validated up front; heatmaps are checked for
/// non-finite values while they are scanned, regression channels wherever
/// they are read.
pub fn decode_scene(tensors: &HeadTensorSet, table: &CategoryTable, config: &DecodeConfig) -> Result<Vec<Detection>> {
    config.validate()?;
    validate_shapes(tensors, table)?;
    let stride = tensors.stride as f64;
    let centers = decode_centers(tensors, config)?;
    let candidates = extract_keypoint_candidates(tensors, config)?;

    centers
        .iter()
        .map(|center| {
            let category_id = center.peak.channel as u32 + 1;
            let coarse = decode_coarse_keypoints(tensors, table, center, category_id)?;
            let slice = table.slice(category_id)?;
            let landmarks = snap_keypoints(&coarse, &candidates[slice], &center.bbox, config)
                .into_iter()
                .map(|k| KeypointPrediction {
                    x: k.x * stride,
                    y: k.y * stride,
                    confidence: k.confidence,
                })
                .collect();
            Ok(Detection {
                category_id,
                score: center.peak.score.clamp(0.0, 1.0),
                bbox: to_pixels(&center.bbox, stride),
                landmarks,
            })
        })
        .collect()
}
