//! Seeded synthetic scenes.
//!
//! Coordinates are multiples of 1/16 px so that every derived quantity
//! (centers, offsets in cells) is exactly representable.

use std::collections::HashSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::category::CategoryTable;
use crate::encode::EncodeParams;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Landmark, Visibility};
use crate::scene::{GroundTruthItem, Scene};

const PLACEMENT_ATTEMPTS: usize = 200;
const LANDMARK_ATTEMPTS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub images: usize,
    pub width: u32,
    pub height: u32,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Box side range in pixels.
    pub box_min: f64,
    pub box_max: f64,
    /// Landmarks are drawn within this half-width (px) of the box center, inside the box.
    pub scatter_radius: f64,
    /// Probability that a labeled landmark is marked occluded.
    pub occlusion_prob: f64,
    /// Probability that a landmark is unlabeled.
    pub unlabeled_prob: f64,
    /// Keep objects apart so that encoding is lossless: boxes at least two
    /// cells apart, center peaks not overlapping, labeled landmarks in
    /// distinct cells across the scene.
    pub separated: bool,
    /// Objects with fewer visible landmarks are redrawn.
    pub min_visible: usize,
    /// Encoder settings the separation rules are computed for.
    pub encode: EncodeParams,
    /// Resize factors the scene will be encoded at. Landmark cells are kept
    /// distinct, and centers and landmarks off cell edges, at each of them.
    pub view_scales: Vec<f64>,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 0,
            images: 20,
            width: 128,
            height: 128,
            objects_min: 1,
            objects_max: 4,
            box_min: 32.0,
            box_max: 64.0,
            scatter_radius: 32.0,
            occlusion_prob: 0.2,
            unlabeled_prob: 0.1,
            separated: true,
            min_visible: 1,
            encode: EncodeParams::default(),
            view_scales: vec![1.0],
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("occlusion_prob", self.occlusion_prob), ("unlabeled_prob", self.unlabeled_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::param(name, format!("{p} not in [0,1]")));
            }
        }
        if self.objects_min > self.objects_max {
            return Err(Error::param(
                "objects",
                format!("min {} exceeds max {}", self.objects_min, self.objects_max),
            ));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::param("image size", "width and height must be positive"));
        }
        let limit = self.width.min(self.height) as f64;
        if !(self.box_min > 0.0 && self.box_min <= self.box_max && self.box_max <= limit) {
            return Err(Error::param(
                "box size",
                format!("need 0 < {} <= {} <= {limit}", self.box_min, self.box_max),
            ));
        }
        if !(self.scatter_radius.is_finite() && self.scatter_radius >= 0.0) {
            return Err(Error::param("scatter_radius", "must be finite and non-negative"));
        }
        if self.view_scales.is_empty() || self.view_scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::param("view_scales", "need at least one positive finite scale"));
        }
        self.encode.validate()
    }
}

fn q(v: f64) -> f64 {
    (v * 16.0).round() / 16.0
}

/// Smallest 1/16 px multiple strictly above `v`.
fn q_above(v: f64) -> f64 {
    (v * 16.0).floor() / 16.0 + 1.0 / 16.0
}

fn q_below(v: f64) -> f64 {
    (v * 16.0).ceil() / 16.0 - 1.0 / 16.0
}

struct Placed {
    bbox: BoundingBox,
    cell: (i64, i64),
    radius: i64,
}

/// A coordinate on a cell edge has no mirror-symmetric cell assignment.
fn on_cell_edge(v: f64, stride: f64) -> bool {
    (v / stride).fract() == 0.0
}

fn on_any_edge(params: &SynthParams, x: f64, y: f64) -> bool {
    let stride = params.encode.stride as f64;
    params.view_scales.iter().any(|s| on_cell_edge(x * s, stride) || on_cell_edge(y * s, stride))
}

/// (scale index, row, col)
type ViewCell = (usize, i64, i64);

fn view_cells(params: &SynthParams, x: f64, y: f64) -> Vec<ViewCell> {
    let stride = params.encode.stride as f64;
    params
        .view_scales
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (r, c) = cell_of(x * s, y * s, stride);
            (i, r, c)
        })
        .collect()
}

fn cell_of(x: f64, y: f64, stride: f64) -> (i64, i64) {
    ((y / stride).floor() as i64, (x / stride).floor() as i64)
}

fn separated_from(p: &Placed, others: &[Placed], stride: f64) -> bool {
    others.iter().all(|o| {
        let gap_x = (p.bbox.x1 - o.bbox.x2).max(o.bbox.x1 - p.bbox.x2);
        let gap_y = (p.bbox.y1 - o.bbox.y2).max(o.bbox.y1 - p.bbox.y2);
        let apart = gap_x.max(gap_y) >= 2.0 * stride;
        let cheb = (p.cell.0 - o.cell.0).abs().max((p.cell.1 - o.cell.1).abs());
        apart && cheb > p.radius + o.radius
    })
}

fn draw_item(
    rng: &mut ChaCha8Rng,
    params: &SynthParams,
    table: &CategoryTable,
    used_cells: &HashSet<ViewCell>,
) -> Option<(GroundTruthItem, Vec<ViewCell>)> {
    let (iw, ih) = (params.width as f64, params.height as f64);
    let w = q(rng.gen_range(params.box_min..=params.box_max)).min(iw);
    let h = q(rng.gen_range(params.box_min..=params.box_max)).min(ih);
    let x1 = q(rng.gen_range(0.0..=iw - w));
    let y1 = q(rng.gen_range(0.0..=ih - h));
    let bbox = BoundingBox::new(x1, y1, (x1 + w).min(iw), (y1 + h).min(ih));
    let category_id = rng.gen_range(1..=table.num_categories() as u32);
    let n = table.keypoint_count(category_id).ok()?;

    let (cx, cy) = bbox.center();
    if on_any_edge(params, cx, cy) {
        return None;
    }
    let s = params.scatter_radius;
    let lo_x = q_above(bbox.x1.max(cx - s));
    let hi_x = q_below(bbox.x2.min(cx + s));
    let lo_y = q_above(bbox.y1.max(cy - s));
    let hi_y = q_below(bbox.y2.min(cy + s));

    let mut cells = Vec::new();
    let mut landmarks = Vec::with_capacity(n);
    for _ in 0..n {
        let unlabeled = rng.gen_bool(params.unlabeled_prob);
        let occluded = rng.gen_bool(params.occlusion_prob);
        if unlabeled || lo_x > hi_x || lo_y > hi_y {
            landmarks.push(Landmark::unlabeled());
            continue;
        }
        let mut placed = None;
        for _ in 0..LANDMARK_ATTEMPTS {
            let x = q(rng.gen_range(lo_x..=hi_x));
            let y = q(rng.gen_range(lo_y..=hi_y));
            if on_any_edge(params, x, y) {
                continue;
            }
            let here = view_cells(params, x, y);
            if params.separated && here.iter().any(|c| used_cells.contains(c) || cells.contains(c)) {
                continue;
            }
            placed = Some((x, y, here));
            break;
        }
        match placed {
            Some((x, y, here)) => {
                cells.extend(here);
                let vis = if occluded { Visibility::Occluded } else { Visibility::Visible };
                landmarks.push(Landmark::new(x, y, vis));
            }
            None => landmarks.push(Landmark::unlabeled()),
        }
    }
    let visible = landmarks.iter().filter(|l| l.visibility == Visibility::Visible).count();
    if visible < params.min_visible {
        return None;
    }
    Some((
        GroundTruthItem {
            category_id,
            bbox,
            landmarks,
        },
        cells,
    ))
}

pub fn synth_scene(params: &SynthParams, table: &CategoryTable, index: usize) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    rng.set_stream(index as u64);
    let stride = params.encode.stride as f64;
    let target = rng.gen_range(params.objects_min..=params.objects_max);

    let mut scene = Scene::new(format!("img_{index:05}"), params.width, params.height);
    let mut placed: Vec<Placed> = Vec::new();
    let mut used_cells: HashSet<ViewCell> = HashSet::new();
    let mut attempts = 0;
    while scene.items.len() < target && attempts < PLACEMENT_ATTEMPTS {
        attempts += 1;
        let Some((item, cells)) = draw_item(&mut rng, params, table, &used_cells) else {
            continue;
        };
        let (cx, cy) = item.bbox.center();
        let p = Placed {
            bbox: item.bbox,
            cell: cell_of(cx, cy, stride),
            radius: params.encode.center_radius(&item.bbox) as i64,
        };
        if params.separated && !separated_from(&p, &placed, stride) {
            continue;
        }
        used_cells.extend(cells);
        placed.push(p);
        scene.items.push(item);
    }
    scene
}

/// Deterministic in `params.seed`; scene `i` depends only on the seed and `i`.
pub fn synth_scenes(params: &SynthParams, table: &CategoryTable) -> Result<Vec<Scene>> {
    params.validate()?;
    Ok((0..params.images).map(|i| synth_scene(params, table, i)).collect())
}
