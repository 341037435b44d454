//! File formats, synthetic data, drivers and reports used by the CLI and the
//! acceptance suite.

pub mod annotations;
pub mod bench;
pub mod compare;
pub mod container;
pub mod plot;
pub mod synth;

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::category::CategoryTable;
use crate::decode::{decode_scene, DecodeConfig};
use crate::encode::{encode_scene, encode_scene_with_warnings, EncodeParams, EncodeWarnings};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalConfig, MetricReport};
use crate::postprocess::ScaleView;
use crate::scene::{Detection, Scene};

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::param("workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// File name of one encoded view: `<id>.dmrk`, `<id>.flip.dmrk`,
/// `<id>.s0.75.dmrk`, `<id>.s0.75.flip.dmrk`.
pub fn view_file_name(image_id: &str, scale: f64, flipped: bool) -> String {
    let mut name = image_id.to_string();
    if scale != 1.0 {
        name.push_str(&format!(".s{scale}"));
    }
    if flipped {
        name.push_str(".flip");
    }
    name.push_str(".dmrk");
    name
}

/// Encodes the scene as seen at `scale`, optionally also its mirror image.
pub fn encode_view(
    scene: &Scene,
    table: &CategoryTable,
    params: &EncodeParams,
    scale: f64,
    flip: bool,
) -> Result<ScaleView> {
    let scaled = if scale == 1.0 { scene.clone() } else { scene.scaled(scale) };
    let tensors = encode_scene(&scaled, table, params)?;
    let flipped = if flip {
        Some(encode_scene(&scaled.mirrored(table)?, table, params)?)
    } else {
        None
    };
    Ok(ScaleView {
        scale,
        tensors,
        flipped,
    })
}

#[derive(Debug, Clone)]
pub struct RoundtripOutcome {
    pub report: MetricReport,
    pub detections: BTreeMap<String, Vec<Detection>>,
    pub warnings: EncodeWarnings,
}

/// Encodes every scene, decodes the targets back and scores the result
/// against the scenes themselves.
pub fn roundtrip(
    scenes: &[Scene],
    table: &CategoryTable,
    encode: &EncodeParams,
    decode: &DecodeConfig,
    eval: &EvalConfig,
    workers: usize,
) -> Result<RoundtripOutcome> {
    let per_image: Vec<(Vec<Detection>, EncodeWarnings)> = with_workers(workers, || {
        scenes
            .par_iter()
            .map(|s| {
                let (t, w) = encode_scene_with_warnings(s, table, encode)?;
                Ok((decode_scene(&t, table, decode)?, w))
            })
            .collect::<Result<Vec<_>>>()
    })??;
    let mut warnings = EncodeWarnings::default();
    let mut detections = BTreeMap::new();
    for (scene, (dets, w)) in scenes.iter().zip(per_image) {
        warnings.center_collisions += w.center_collisions;
        warnings.refine_collisions += w.refine_collisions;
        detections.insert(scene.image_id.clone(), dets);
    }
    let report = evaluate(&detections, scenes, table, eval)?;
    Ok(RoundtripOutcome {
        report,
        detections,
        warnings,
    })
}
