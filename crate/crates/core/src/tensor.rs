//! The six head tensors of the detector at one feature-map resolution.
//!
//! All grids are `[channels][height][width]`, row-major, `f64`. Regression
//! channels are expressed in feature-cell units; multiply by `stride` to get
//! input pixels.

use std::fmt;

use ndarray::Array3;

use crate::category::{CategoryTable, NUM_KEYPOINTS};
use crate::error::{Error, Result};

pub const CENTER: &str = "center";
pub const WH: &str = "wh";
pub const CENTER_OFFSET: &str = "center_offset";
pub const KP_OFFSET: &str = "kp_offset";
pub const KP_HEATMAP: &str = "kp_heatmap";
pub const KP_REFINE_OFFSET: &str = "kp_refine_offset";

pub const TENSOR_NAMES: [&str; 6] = [CENTER, WH, CENTER_OFFSET, KP_OFFSET, KP_HEATMAP, KP_REFINE_OFFSET];

#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensorSet {
    pub stride: u32,
    /// Per-category center heatmaps.
    pub center: Array3<f64>,
    /// Box width and height in cells, read at the center cell.
    pub wh: Array3<f64>,
    /// Fractional center position within the peak cell.
    pub center_offset: Array3<f64>,
    /// Channels `2g`, `2g+1`: coarse displacement of global keypoint `g` from the object center.
    pub kp_offset: Array3<f64>,
    /// One heatmap per global keypoint.
    pub kp_heatmap: Array3<f64>,
    /// Fractional landmark position within the keypoint peak cell, shared by all keypoints.
    pub kp_refine_offset: Array3<f64>,
}

/// Expected channel counts, in [`TENSOR_NAMES`] order.
pub fn expected_channels(table: &CategoryTable) -> [usize; 6] {
    [table.num_categories(), 2, 2, 2 * NUM_KEYPOINTS, NUM_KEYPOINTS, 2]
}

impl HeadTensorSet {
    pub fn zeros(table: &CategoryTable, stride: u32, height: usize, width: usize) -> Self {
        let [c, wh, co, ko, kh, kr] = expected_channels(table);
        let z = |ch| Array3::<f64>::zeros((ch, height, width));
        HeadTensorSet {
            stride,
            center: z(c),
            wh: z(wh),
            center_offset: z(co),
            kp_offset: z(ko),
            kp_heatmap: z(kh),
            kp_refine_offset: z(kr),
        }
    }

    pub fn height(&self) -> usize {
        self.center.dim().1
    }

    pub fn width(&self) -> usize {
        self.center.dim().2
    }

    pub fn named(&self) -> [(&'static str, &Array3<f64>); 6] {
        [
            (CENTER, &self.center),
            (WH, &self.wh),
            (CENTER_OFFSET, &self.center_offset),
            (KP_OFFSET, &self.kp_offset),
            (KP_HEATMAP, &self.kp_heatmap),
            (KP_REFINE_OFFSET, &self.kp_refine_offset),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Array3<f64>); 6] {
        [
            (CENTER, &mut self.center),
            (WH, &mut self.wh),
            (CENTER_OFFSET, &mut self.center_offset),
            (KP_OFFSET, &mut self.kp_offset),
            (KP_HEATMAP, &mut self.kp_heatmap),
            (KP_REFINE_OFFSET, &mut self.kp_refine_offset),
        ]
    }

    /// True when every tensor has the same shape as the matching tensor of `other`.
    pub fn same_shape(&self, other: &HeadTensorSet) -> bool {
        self.stride == other.stride
            && self
                .named()
                .iter()
                .zip(other.named().iter())
                .all(|((_, a), (_, b))| a.dim() == b.dim())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorIssue {
    Channels {
        tensor: &'static str,
        expected: usize,
        actual: usize,
    },
    Spatial {
        tensor: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    NonFinite {
        tensor: &'static str,
        channel: usize,
        row: usize,
        col: usize,
    },
    Stride,
}

impl fmt::Display for TensorIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorIssue::Channels {
                tensor,
                expected,
                actual,
            } => write!(f, "{tensor}: expected {expected} channels, found {actual}"),
            TensorIssue::Spatial {
                tensor,
                expected,
                actual,
            } => write!(
                f,
                "{tensor}: expected {}x{} cells, found {}x{}",
                expected.0, expected.1, actual.0, actual.1
            ),
            TensorIssue::NonFinite {
                tensor,
                channel,
                row,
                col,
            } => write!(
                f,
                "{tensor}: non-finite value at channel {channel}, cell ({row}, {col})"
            ),
            TensorIssue::Stride => write!(f, "stride must be at least 1"),
        }
    }
}

fn all_finite(grid: &Array3<f64>) -> bool {
    match grid.as_slice_memory_order() {
        Some(s) => s.chunks(8).all(|c| c.iter().fold(0.0, |acc, v| acc + v * 0.0) == 0.0),
        None => grid.iter().all(|v| v.is_finite()),
    }
}

fn shape_issues(tensors: &HeadTensorSet, table: &CategoryTable) -> Vec<TensorIssue> {
    let mut issues = Vec::new();
    if tensors.stride == 0 {
        issues.push(TensorIssue::Stride);
    }
    let (_, h, w) = tensors.center.dim();
    for ((name, grid), expected) in tensors.named().into_iter().zip(expected_channels(table)) {
        let (c, gh, gw) = grid.dim();
        if c != expected {
            issues.push(TensorIssue::Channels {
                tensor: name,
                expected,
                actual: c,
            });
        }
        if (gh, gw) != (h, w) {
            issues.push(TensorIssue::Spatial {
                tensor: name,
                expected: (h, w),
                actual: (gh, gw),
            });
        }
    }
    issues
}

/// Channel counts, shared spatial size and stride only.
pub fn validate_shapes(tensors: &HeadTensorSet, table: &CategoryTable) -> Result<()> {
    let issues = shape_issues(tensors, table);
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}

/// Checks channel counts, shared spatial size and finiteness of every value.
///
/// Every problem found is listed; non-finite values are reported once per
/// tensor (the first in row-major order).
pub fn validate_head_tensors(tensors: &HeadTensorSet, table: &CategoryTable) -> Result<()> {
    let mut issues = shape_issues(tensors, table);
    for (name, grid) in tensors.named() {
        if all_finite(grid) {
            continue;
        }
        if let Some(((channel, row, col), _)) = grid.indexed_iter().find(|(_, v)| !v.is_finite()) {
            issues.push(TensorIssue::NonFinite {
                tensor: name,
                channel,
                row,
                col,
            });
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(issues))
    }
}
