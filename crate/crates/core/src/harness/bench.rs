//! Per-stage latency of decoding and post-processing.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::category::CategoryTable;
use crate::decode::{decode_scene, DecodeConfig};
use crate::error::{Error, Result};
use crate::postprocess::{decode_view, nms, run_strategy, FusionConfig, ScaleView};
use crate::scene::Detection;

pub const DECODE: &str = "decode";
pub const NMS: &str = "nms";
pub const FLIP_FUSION: &str = "flip_fusion";
pub const MULTISCALE: &str = "multiscale";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage: String,
    pub samples: usize,
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub stages: Vec<StageStats>,
    pub images: usize,
    pub threads: usize,
    pub iterations: usize,
    pub warmup: usize,
    /// Every timed iteration produced the same detections.
    pub deterministic: bool,
}

impl BenchReport {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.stage == name)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{} image(s), {} iteration(s) after {} warm-up, {} thread(s)\n{:<12} {:>10} {:>10} {:>10}\n",
            self.images, self.iterations, self.warmup, self.threads, "stage", "mean ms", "p50 ms", "p95 ms"
        );
        for st in &self.stages {
            s.push_str(&format!(
                "{:<12} {:>10.3} {:>10.3} {:>10.3}\n",
                st.stage, st.mean_ms, st.p50_ms, st.p95_ms
            ));
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub iterations: usize,
    pub warmup: usize,
    pub decode: DecodeConfig,
    pub fusion: FusionConfig,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            iterations: 50,
            warmup: 5,
            decode: DecodeConfig::default(),
            fusion: FusionConfig::default(),
        }
    }
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn stage_stats(stage: &str, samples: &[f64]) -> StageStats {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    StageStats {
        stage: stage.to_string(),
        samples: sorted.len(),
        mean_ms: if sorted.is_empty() {
            0.0
        } else {
            sorted.iter().sum::<f64>() / sorted.len() as f64
        },
        p50_ms: percentile(&sorted, 50.0),
        p95_ms: percentile(&sorted, 95.0),
    }
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64() * 1e3)
}

/// Times each enabled stage per image on the calling thread. `images[i]` holds
/// the views of image `i`; the view at scale 1 is used for the single-scale
/// stages. The flip stage is present only when flip fusion is enabled and a
/// flipped view exists; the multiscale stage only with more than one scale.
pub fn bench_decode(images: &[Vec<ScaleView>], table: &CategoryTable, config: &BenchConfig) -> Result<BenchReport> {
    if config.iterations == 0 {
        return Err(Error::param("iterations", "must be at least 1"));
    }
    config.decode.validate()?;
    config.fusion.validate()?;
    let base: Vec<&ScaleView> = images
        .iter()
        .map(|views| {
            views
                .iter()
                .find(|v| v.scale == 1.0)
                .ok_or_else(|| Error::param("views", "every image needs a view at scale 1"))
        })
        .collect::<Result<_>>()?;
    let fusion = &config.fusion;
    let run_flip = fusion.flip_enabled && base.iter().all(|v| v.flipped.is_some());
    let run_multi = fusion.scales.len() > 1;
    let single = FusionConfig {
        scales: vec![1.0],
        ..fusion.clone()
    };

    let mut decode_ms = Vec::new();
    let mut nms_ms = Vec::new();
    let mut flip_ms = Vec::new();
    let mut multi_ms = Vec::new();
    let mut reference: Vec<Option<Vec<Detection>>> = vec![None; images.len()];
    let mut deterministic = true;

    for iter in 0..config.warmup + config.iterations {
        let record = iter >= config.warmup;
        for (i, views) in images.iter().enumerate() {
            let (dets, t) = timed(|| decode_scene(&base[i].tensors, table, &config.decode));
            let dets = dets?;
            if fusion.nms_enabled {
                let (_, t) = timed(|| nms(&dets, fusion.nms_iou_threshold));
                if record {
                    nms_ms.push(t);
                }
            }
            if run_flip {
                let (out, t) = timed(|| decode_view(base[i], table, &config.decode, &single));
                out?;
                if record {
                    flip_ms.push(t);
                }
            }
            if run_multi {
                let (out, t) = timed(|| run_strategy(views, table, &config.decode, fusion));
                out?;
                if record {
                    multi_ms.push(t);
                }
            }
            if record {
                decode_ms.push(t);
                match &reference[i] {
                    Some(r) => deterministic &= *r == dets,
                    None => reference[i] = Some(dets),
                }
            }
        }
    }

    let mut stages = vec![stage_stats(DECODE, &decode_ms)];
    if fusion.nms_enabled {
        stages.push(stage_stats(NMS, &nms_ms));
    }
    if run_flip {
        stages.push(stage_stats(FLIP_FUSION, &flip_ms));
    }
    if run_multi {
        stages.push(stage_stats(MULTISCALE, &multi_ms));
    }
    Ok(BenchReport {
        stages,
        images: images.len(),
        threads: 1,
        iterations: config.iterations,
        warmup: config.warmup,
        deterministic,
    })
}
