//! Ground-truth rendering into head tensors.
//!
//! Centers and keypoints become Gaussian peaks composed by element-wise
//! maximum; sizes and offsets are written at the peak cells. Sub-cell
//! positions are quantized to a 2^-24 cell lattice before splitting into
//! cell index and fraction, so every stored fraction `f` has an exactly
//! representable mirror `1 - f`.

use ndarray::ArrayViewMut2;

use crate::category::CategoryTable;
use crate::error::{Error, Result};
use crate::geometry::BoundingBox;
use crate::scene::Scene;
use crate::tensor::HeadTensorSet;

const LATTICE: f64 = 16_777_216.0; // 2^24

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncodeParams {
    pub stride: u32,
    pub min_overlap: f64,
    /// Multiplier on the owning box's center radius, used for keypoint peaks.
    pub keypoint_radius_scale: f64,
}

impl Default for EncodeParams {
    fn default() -> Self {
        EncodeParams {
            stride: 4,
            min_overlap: 0.7,
            keypoint_radius_scale: 1.0,
        }
    }
}

impl EncodeParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::param("stride", "must be at least 1"));
        }
        if !(self.min_overlap > 0.0 && self.min_overlap < 1.0) {
            return Err(Error::param("min_overlap", format!("{} not in (0,1)", self.min_overlap)));
        }
        if !(self.keypoint_radius_scale.is_finite() && self.keypoint_radius_scale >= 0.0) {
            return Err(Error::param(
                "keypoint_radius_scale",
                format!("{} must be finite and non-negative", self.keypoint_radius_scale),
            ));
        }
        Ok(())
    }

    /// Integer peak radius (cells) for a box given in pixels.
    pub fn center_radius(&self, bbox: &BoundingBox) -> u32 {
        let r = self.stride as f64;
        gaussian_radius(bbox.width() / r, bbox.height() / r, self.min_overlap)
            .map(|v| v.floor() as u32)
            .unwrap_or(0)
    }

    pub fn keypoint_radius(&self, bbox: &BoundingBox) -> u32 {
        let r = self.stride as f64;
        gaussian_radius(bbox.width() / r, bbox.height() / r, self.min_overlap)
            .map(|v| (v * self.keypoint_radius_scale).floor() as u32)
            .unwrap_or(0)
    }
}

/// Largest corner perturbation (cells) that keeps IoU with the original box at
/// or above `min_overlap`, taken as the tightest of three cases: both corners
/// shifted diagonally, the box shrunk on every side, the box grown on every side.
pub fn gaussian_radius(box_w: f64, box_h: f64, min_overlap: f64) -> Result<f64> {
    if !(box_w > 0.0 && box_h > 0.0) {
        return Err(Error::param(
            "box size",
            format!("{box_w}x{box_h} must be positive"),
        ));
    }
    if !(min_overlap > 0.0 && min_overlap < 1.0) {
        return Err(Error::param("min_overlap", format!("{min_overlap} not in (0,1)")));
    }
    let (w, h, o) = (box_w, box_h, min_overlap);

    // (w-r)(h-r) / (2wh - (w-r)(h-r)) >= o; smaller root.
    let b1 = w + h;
    let c1 = w * h * (1.0 - o) / (1.0 + o);
    let shifted = (b1 - (b1 * b1 - 4.0 * c1).sqrt()) / 2.0;

    // (w-2r)(h-2r) / wh >= o; smaller root.
    let b2 = 2.0 * (w + h);
    let c2 = (1.0 - o) * w * h;
    let shrunk = (b2 - (b2 * b2 - 16.0 * c2).sqrt()) / 8.0;

    // wh / ((w+2r)(h+2r)) >= o; positive root.
    let a3 = 4.0 * o;
    let b3 = 2.0 * o * (w + h);
    let c3 = (o - 1.0) * w * h;
    let grown = (-b3 + (b3 * b3 - 4.0 * a3 * c3).sqrt()) / (2.0 * a3);

    Ok(shifted.min(shrunk).min(grown).max(0.0))
}

/// Max-composes a Gaussian peak of height 1 at `(row, col)`; the kernel is
/// truncated to the `(2r+1)^2` window and to the grid.
pub fn render_gaussian(grid: &mut ArrayViewMut2<f64>, row: usize, col: usize, radius: u32) {
    let (h, w) = grid.dim();
    let sigma = (radius.max(1) as f64) / 3.0;
    let denom = 2.0 * sigma * sigma;
    let r = radius as i64;
    for dy in -r..=r {
        let y = row as i64 + dy;
        if y < 0 || y >= h as i64 {
            continue;
        }
        for dx in -r..=r {
            let x = col as i64 + dx;
            if x < 0 || x >= w as i64 {
                continue;
            }
            let v = (-((dx * dx + dy * dy) as f64) / denom).exp();
            let cell = &mut grid[[y as usize, x as usize]];
            if v > *cell {
                *cell = v;
            }
        }
    }
}

/// Splits a position in cells into a clamped cell index and the remainder.
pub fn cell_and_fraction(pos_cells: f64, cells: usize) -> (usize, f64) {
    let q = (pos_cells * LATTICE).round() / LATTICE;
    let cell = (q.floor().max(0.0) as usize).min(cells.saturating_sub(1));
    (cell, q - cell as f64)
}

fn quantize(pos_cells: f64) -> f64 {
    (pos_cells * LATTICE).round() / LATTICE
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EncodeWarnings {
    /// Objects whose center cell was already claimed by a larger object.
    pub center_collisions: usize,
    /// Landmarks whose refine offset lost to another landmark in the same cell.
    pub refine_collisions: usize,
}

pub fn encode_scene(scene: &Scene, table: &CategoryTable, params: &EncodeParams) -> Result<HeadTensorSet> {
    encode_scene_with_warnings(scene, table, params).map(|(t, _)| t)
}

pub fn encode_scene_with_warnings(
    scene: &Scene,
    table: &CategoryTable,
    params: &EncodeParams,
) -> Result<(HeadTensorSet, EncodeWarnings)> {
    params.validate()?;
    scene.validate(table)?;

    let r = params.stride as f64;
    let height = (scene.height as usize).div_ceil(params.stride as usize).max(1);
    let width = (scene.width as usize).div_ceil(params.stride as usize).max(1);
    let mut t = HeadTensorSet::zeros(table, params.stride, height, width);
    let mut warnings = EncodeWarnings::default();

    // Larger objects claim shared cells first.
    let mut order: Vec<usize> = (0..scene.items.len()).collect();
    order.sort_by(|&a, &b| scene.items[b].bbox.area().total_cmp(&scene.items[a].bbox.area()));
    let mut center_taken = vec![false; height * width];
    let mut refine_taken = vec![false; height * width];

    for item in order.into_iter().map(|i| &scene.items[i]) {
        let spec = table.spec(item.category_id)?;
        let (cx, cy) = item.bbox.center();
        let (col, fx) = cell_and_fraction(cx / r, width);
        let (row, fy) = cell_and_fraction(cy / r, height);
        let center_x = col as f64 + fx;
        let center_y = row as f64 + fy;

        let channel = (item.category_id - 1) as usize;
        render_gaussian(
            &mut t.center.index_axis_mut(ndarray::Axis(0), channel),
            row,
            col,
            params.center_radius(&item.bbox),
        );

        let owns_center = !std::mem::replace(&mut center_taken[row * width + col], true);
        if !owns_center {
            warnings.center_collisions += 1;
        } else {
            t.wh[[0, row, col]] = item.bbox.width() / r;
            t.wh[[1, row, col]] = item.bbox.height() / r;
            t.center_offset[[0, row, col]] = fx;
            t.center_offset[[1, row, col]] = fy;
        }

        let kp_radius = params.keypoint_radius(&item.bbox);
        for (local, lm) in item.landmarks.iter().enumerate() {
            if !lm.visibility.is_labeled() {
                continue;
            }
            let g = spec.global_offset + local;
            if owns_center {
                t.kp_offset[[2 * g, row, col]] = quantize(lm.x / r) - center_x;
                t.kp_offset[[2 * g + 1, row, col]] = quantize(lm.y / r) - center_y;
            }
            let (kc, kfx) = cell_and_fraction(lm.x / r, width);
            let (kr, kfy) = cell_and_fraction(lm.y / r, height);
            render_gaussian(
                &mut t.kp_heatmap.index_axis_mut(ndarray::Axis(0), g),
                kr,
                kc,
                kp_radius,
            );
            if std::mem::replace(&mut refine_taken[kr * width + kc], true) {
                warnings.refine_collisions += 1;
            } else {
                t.kp_refine_offset[[0, kr, kc]] = kfx;
                t.kp_refine_offset[[1, kr, kc]] = kfy;
            }
        }
    }
    Ok((t, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Landmark, Visibility};
    use crate::scene::GroundTruthItem;
    use crate::tensor::validate_head_tensors;
    use ndarray::Array2;

    fn iou(a: [f64; 4], b: [f64; 4]) -> f64 {
        let iw = (a[2].min(b[2]) - a[0].max(b[0])).max(0.0);
        let ih = (a[3].min(b[3]) - a[1].max(b[1])).max(0.0);
        let inter = iw * ih;
        let area = |x: [f64; 4]| (x[2] - x[0]) * (x[3] - x[1]);
        inter / (area(a) + area(b) - inter)
    }

    /// All three perturbations keep IoU >= o.
    fn radius_ok(w: f64, h: f64, o: f64, r: f64) -> bool {
        let gt = [0.0, 0.0, w, h];
        iou(gt, [r, r, w + r, h + r]) >= o - 1e-12
            && iou(gt, [r, r, w - r, h - r]) >= o - 1e-12
            && iou(gt, [-r, -r, w + r, h + r]) >= o - 1e-12
    }

    fn brute_radius(w: f64, h: f64, o: f64) -> f64 {
        // bisection on the monotone predicate
        let (mut lo, mut hi) = (0.0, w.min(h) / 2.0);
        for _ in 0..200 {
            let mid = (lo + hi) / 2.0;
            if radius_ok(w, h, o, mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }

    #[test]
    fn radius_matches_brute_force() {
        for &(w, h, o) in &[(10.0, 10.0, 0.7), (20.0, 20.0, 0.7), (7.0, 31.0, 0.5), (3.5, 2.0, 0.9)] {
            let got = gaussian_radius(w, h, o).unwrap();
            let want = brute_radius(w, h, o);
            assert!((got - want).abs() < 1e-9, "{w}x{h}@{o}: {got} vs {want}");
        }
    }

    #[test]
    fn radius_pinned_values() {
        // frozen from brute_radius
        let r10 = gaussian_radius(10.0, 10.0, 0.7).unwrap();
        assert!((r10 - 0.816_699_867_329_622_2).abs() < 1e-12, "{r10}");
        assert_eq!(r10.floor(), 0.0);
        // a one-axis shift by r10 still keeps IoU >= 0.7; the largest such integer shift is 1
        assert!(iou([0.0, 0.0, 10.0, 10.0], [r10, 0.0, 10.0 + r10, 10.0]) >= 0.7);
        assert!(iou([0.0, 0.0, 10.0, 10.0], [1.0, 0.0, 11.0, 10.0]) >= 0.7);
        assert!(iou([0.0, 0.0, 10.0, 10.0], [2.0, 0.0, 12.0, 10.0]) < 0.7);
        assert!(r10 <= 1.0);
    }

    #[test]
    fn radius_degenerate_and_monotone() {
        assert!(gaussian_radius(1e-9, 1e-9, 0.7).unwrap() < 1e-8);
        assert!(gaussian_radius(0.0, 5.0, 0.7).is_err());
        assert!(gaussian_radius(5.0, 5.0, 1.0).is_err());
        assert!(gaussian_radius(20.0, 20.0, 0.7).unwrap() > gaussian_radius(10.0, 10.0, 0.7).unwrap());
    }

    #[test]
    fn gaussian_kernel() {
        let mut g = Array2::<f64>::zeros((9, 9));
        render_gaussian(&mut g.view_mut(), 4, 4, 0);
        assert_eq!(g.sum(), 1.0);
        assert_eq!(g[[4, 4]], 1.0);

        let mut g = Array2::<f64>::zeros((9, 9));
        render_gaussian(&mut g.view_mut(), 4, 4, 3);
        // sigma = 1, three sigma along an axis
        assert!((g[[4, 7]] - (-4.5f64).exp()).abs() < 1e-7);
        assert!((g[[4, 7]] - 0.011_108_996_538_242_3).abs() < 1e-7);
        assert_eq!(g[[4, 8]], 0.0);
    }

    #[test]
    fn gaussian_max_composition() {
        let mut a = Array2::<f64>::zeros((12, 12));
        let mut b = Array2::<f64>::zeros((12, 12));
        let mut both = Array2::<f64>::zeros((12, 12));
        render_gaussian(&mut a.view_mut(), 4, 4, 3);
        render_gaussian(&mut b.view_mut(), 6, 7, 2);
        render_gaussian(&mut both.view_mut(), 4, 4, 3);
        render_gaussian(&mut both.view_mut(), 6, 7, 2);
        for ((i, j), v) in both.indexed_iter() {
            assert_eq!(*v, a[[i, j]].max(b[[i, j]]));
        }
    }

    fn one_item_scene(table: &CategoryTable) -> Scene {
        let n = table.keypoint_count(1).unwrap();
        let mut landmarks = vec![Landmark::unlabeled(); n];
        landmarks[0] = Landmark::new(44.0, 44.0, Visibility::Visible);
        Scene {
            image_id: "x".into(),
            width: 128,
            height: 128,
            items: vec![GroundTruthItem {
                category_id: 1,
                bbox: BoundingBox::new(32.0, 28.0, 48.0, 52.0),
                landmarks,
            }],
        }
    }

    #[test]
    fn empty_scene_is_all_zero() {
        let table = CategoryTable::default();
        let t = encode_scene(&Scene::new("e", 64, 48), &table, &EncodeParams::default()).unwrap();
        assert_eq!((t.height(), t.width()), (12, 16));
        assert!(t.named().iter().all(|(_, g)| g.iter().all(|&v| v == 0.0)));
        assert!(validate_head_tensors(&t, &table).is_ok());
    }

    #[test]
    fn single_item_analytic_cells() {
        let table = CategoryTable::default();
        let t = encode_scene(&one_item_scene(&table), &table, &EncodeParams::default()).unwrap();
        assert_eq!(t.center[[0, 10, 10]], 1.0);
        assert_eq!((t.wh[[0, 10, 10]], t.wh[[1, 10, 10]]), (4.0, 6.0));
        assert_eq!((t.center_offset[[0, 10, 10]], t.center_offset[[1, 10, 10]]), (0.0, 0.0));
        assert_eq!(t.kp_heatmap[[0, 11, 11]], 1.0);
        assert_eq!((t.kp_offset[[0, 10, 10]], t.kp_offset[[1, 10, 10]]), (1.0, 1.0));
        assert!(t.center.iter().chain(t.kp_heatmap.iter()).all(|&v| v <= 1.0));
        // only landmark 0 is labeled
        for g in 1..294 {
            assert!(t.kp_heatmap.index_axis(ndarray::Axis(0), g).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn odd_image_size_pads_grid() {
        let table = CategoryTable::default();
        let t = encode_scene(&Scene::new("p", 130, 127), &table, &EncodeParams::default()).unwrap();
        assert_eq!((t.height(), t.width()), (32, 33));
    }

    #[test]
    fn center_collision_keeps_larger_object() {
        let table = CategoryTable::default();
        let mut scene = one_item_scene(&table);
        let mut small = scene.items[0].clone();
        small.bbox = BoundingBox::new(36.0, 36.0, 44.0, 44.0);
        small.category_id = 1;
        scene.items.insert(0, small);
        let (t, w) = encode_scene_with_warnings(&scene, &table, &EncodeParams::default()).unwrap();
        assert_eq!(w.center_collisions, 1);
        assert_eq!((t.wh[[0, 10, 10]], t.wh[[1, 10, 10]]), (4.0, 6.0));
    }

    #[test]
    fn mismatched_scene_rejected() {
        let table = CategoryTable::default();
        let mut scene = one_item_scene(&table);
        scene.items[0].category_id = 2;
        assert!(encode_scene(&scene, &table, &EncodeParams::default()).is_err());
    }
}
