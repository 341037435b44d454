//! Acceptance criteria, one PASS/FAIL line each. Runs as a plain binary so the
//! criteria execute sequentially and the latency measurement runs alone.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use deepmark::harness::roundtrip;
use deepmark::harness::synth::{synth_scenes, SynthParams};
use deepmark::metrics::oks;
use deepmark::{
    decode_scene, encode_scene, evaluate, flip_tensors, fuse_tensors, iou, nms, BoundingBox, CategoryTable,
    DecodeConfig, Detection, EncodeParams, EvalConfig, GroundTruthItem, HeadTensorSet, KeypointPrediction, Landmark,
    Scene, Visibility, VisibilityMode,
};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// 1. round trip

fn roundtrip_exactness() -> Outcome {
    let table = CategoryTable::default();
    let params = SynthParams {
        seed: 2024,
        images: 1000,
        ..SynthParams::default()
    };
    let start = Instant::now();
    let scenes = synth_scenes(&params, &table).map_err(|e| e.to_string())?;
    let out = roundtrip(
        &scenes,
        &table,
        &params.encode,
        &DecodeConfig::default(),
        &EvalConfig::default(),
        1,
    )
    .map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let r = &out.report;
    for (name, s) in [("box", &r.bbox), ("pt visible", &r.pt_visible), ("pt all", &r.pt_all)] {
        let mut values = vec![s.map, s.map_50, s.map_75];
        values.extend(s.per_threshold.iter().map(|(_, v)| *v));
        values.extend(s.per_category.iter().filter(|c| c.n_gt > 0).flat_map(|c| [c.ap, c.ap_50, c.ap_75]));
        for v in values {
            let v = v.ok_or_else(|| format!("{name}: undefined value"))?;
            check((v - 1.0).abs() <= 1e-9, || format!("{name}: {v} != 1"))?;
        }
    }
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} scenes, {} objects, mAP_box = mAP_pt = 1 in both modes, {:.1} s",
        scenes.len(),
        r.ground_truths,
        elapsed.as_secs_f64()
    ))
}

// 2. metric oracle

mod oracle {
    use super::*;

    fn box_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
        let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
        let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
        let inter = w * h;
        let union = (a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter;
        if union > 0.0 {
            inter / union
        } else {
            0.0
        }
    }

    fn counted(v: Visibility, all: bool) -> bool {
        match v {
            Visibility::Visible => true,
            Visibility::Occluded => all,
            _ => false,
        }
    }

    fn keypoint_similarity(d: &Detection, g: &GroundTruthItem, sigmas: &[f64], all: bool) -> f64 {
        if d.landmarks.is_empty() {
            return 0.0;
        }
        let area = (g.bbox.x2 - g.bbox.x1) * (g.bbox.y2 - g.bbox.y1) + f64::EPSILON;
        let mut total = 0.0;
        let mut n = 0.0;
        for ((l, p), k) in g.landmarks.iter().zip(&d.landmarks).zip(sigmas) {
            if !counted(l.visibility, all) {
                continue;
            }
            let dx = p.x - l.x;
            let dy = p.y - l.y;
            total += (-(dx * dx + dy * dy) / (2.0 * area * k * k)).exp();
            n += 1.0;
        }
        total / n
    }

    /// `None` for the box task, `Some(all)` for landmarks.
    fn category_ap(
        task: Option<bool>,
        category: u32,
        t: f64,
        scenes: &[&Scene],
        dets: &BTreeMap<String, Vec<Detection>>,
        table: &CategoryTable,
        max_dets: usize,
    ) -> Option<f64> {
        let range = table.slice(category).unwrap();
        let sigmas = &table.sigmas()[range];
        let mut ranked: Vec<(f64, bool)> = Vec::new();
        let mut n_gt = 0usize;
        for s in scenes {
            let gts: Vec<&GroundTruthItem> = s
                .items
                .iter()
                .filter(|g| g.category_id == category)
                .filter(|g| match task {
                    None => true,
                    Some(all) => g.landmarks.iter().any(|l| counted(l.visibility, all)),
                })
                .collect();
            n_gt += gts.len();
            let mut ds: Vec<&Detection> = dets
                .get(&s.image_id)
                .map(|v| v.iter().filter(|d| d.category_id == category).collect())
                .unwrap_or_default();
            ds.sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap());
            ds.truncate(max_dets);
            let mut used = vec![false; gts.len()];
            for d in ds {
                let mut pick: Option<usize> = None;
                let mut pick_sim = f64::NEG_INFINITY;
                for (gi, g) in gts.iter().enumerate() {
                    let sim = match task {
                        None => box_iou(&d.bbox, &g.bbox),
                        Some(all) => keypoint_similarity(d, g, sigmas, all),
                    };
                    if !used[gi] && sim >= t && sim > pick_sim {
                        pick = Some(gi);
                        pick_sim = sim;
                    }
                }
                if let Some(gi) = pick {
                    used[gi] = true;
                }
                ranked.push((d.score, pick.is_some()));
            }
        }
        if n_gt == 0 {
            return None;
        }
        ranked.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let mut points = Vec::new();
        let mut tp = 0;
        for (i, &(_, hit)) in ranked.iter().enumerate() {
            tp += hit as usize;
            points.push((tp as f64 / n_gt as f64, tp as f64 / (i + 1) as f64));
        }
        let mut sum = 0.0;
        for k in 0..=100 {
            let r = k as f64 / 100.0;
            sum += points.iter().filter(|p| p.0 >= r).map(|p| p.1).fold(0.0, f64::max);
        }
        Some(sum / 101.0)
    }

    fn avg(v: &[f64]) -> Option<f64> {
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    /// Same layout as `MetricReport::all_values`.
    pub fn values(
        scenes: &[Scene],
        dets: &BTreeMap<String, Vec<Detection>>,
        table: &CategoryTable,
        config: &EvalConfig,
    ) -> Vec<Option<f64>> {
        let mut ordered: Vec<&Scene> = scenes.iter().collect();
        ordered.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        let grid = &config.thresholds;
        let mut out = Vec::new();
        for task in [None, Some(false), Some(true)] {
            let ap = |c: u32, t: f64| category_ap(task, c, t, &ordered, dets, table, config.max_detections_per_image);
            let ids: Vec<u32> = table.specs().iter().map(|s| s.id).collect();
            let at = |t: f64| avg(&ids.iter().filter_map(|&c| ap(c, t)).collect::<Vec<_>>());
            let per_t: Vec<Option<f64>> = grid.iter().map(|&t| at(t)).collect();
            let map = if per_t.iter().all(Option::is_some) {
                avg(&per_t.iter().flatten().copied().collect::<Vec<_>>())
            } else {
                None
            };
            out.extend([map, at(0.5), at(0.75)]);
            out.extend(per_t);
            for &c in &ids {
                let row: Vec<f64> = grid.iter().filter_map(|&t| ap(c, t)).collect();
                out.extend([avg(&row), ap(c, 0.5), ap(c, 0.75)]);
            }
        }
        out
    }
}

fn perturbed_detections(scenes: &[Scene], table: &CategoryTable, rng: &mut ChaCha8Rng) -> BTreeMap<String, Vec<Detection>> {
    let n_cat = table.num_categories() as u32;
    let mut out = BTreeMap::new();
    for s in scenes {
        let mut dets = Vec::new();
        let score = |rng: &mut ChaCha8Rng| (rng.gen_range(0..20) as f64) / 20.0;
        for g in &s.items {
            let copies = if rng.gen_bool(0.15) { 0 } else if rng.gen_bool(0.3) { 2 } else { 1 };
            for _ in 0..copies {
                let mut d = Detection::from_ground_truth(g, score(rng));
                if rng.gen_bool(0.1) {
                    d.category_id = rng.gen_range(1..=n_cat);
                    d.landmarks = vec![KeypointPrediction::default(); table.keypoint_count(d.category_id).unwrap()];
                }
                let (w, h) = (g.bbox.width(), g.bbox.height());
                let j = rng.gen_range(0.0..0.25);
                d.bbox = BoundingBox::new(
                    d.bbox.x1 + rng.gen_range(-j..=j) * w,
                    d.bbox.y1 + rng.gen_range(-j..=j) * h,
                    d.bbox.x2 + rng.gen_range(-j..=j) * w,
                    d.bbox.y2 + rng.gen_range(-j..=j) * h,
                );
                let spread = rng.gen_range(0.0..0.2) * w.max(h);
                for k in &mut d.landmarks {
                    k.x += rng.gen_range(-spread..=spread);
                    k.y += rng.gen_range(-spread..=spread);
                    k.confidence = rng.gen();
                }
                if rng.gen_bool(0.1) {
                    d.landmarks.clear();
                }
                dets.push(d);
            }
        }
        for _ in 0..rng.gen_range(0..5) {
            let category_id = rng.gen_range(1..=n_cat);
            let (x, y) = (rng.gen_range(0.0..96.0), rng.gen_range(0.0..96.0));
            let n = table.keypoint_count(category_id).unwrap();
            dets.push(Detection {
                category_id,
                score: score(rng),
                bbox: BoundingBox::new(x, y, x + rng.gen_range(8.0..64.0), y + rng.gen_range(8.0..64.0)),
                landmarks: (0..n)
                    .map(|_| KeypointPrediction {
                        x: x + rng.gen_range(0.0..32.0),
                        y: y + rng.gen_range(0.0..32.0),
                        confidence: rng.gen(),
                    })
                    .collect(),
            });
        }
        if !dets.is_empty() || rng.gen_bool(0.5) {
            out.insert(s.image_id.clone(), dets);
        }
    }
    out
}

fn metric_oracle() -> Outcome {
    let table = CategoryTable::default();
    let mut compared = 0usize;
    let mut worst: f64 = 0.0;
    for case in 0..50u64 {
        let params = SynthParams {
            seed: 1000 + case,
            images: 20,
            objects_min: 0,
            objects_max: 6,
            separated: case % 2 == 0,
            occlusion_prob: 0.3,
            unlabeled_prob: 0.2,
            min_visible: 0,
            ..SynthParams::default()
        };
        let scenes = synth_scenes(&params, &table).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(case);
        let dets = perturbed_detections(&scenes, &table, &mut rng);
        let config = EvalConfig {
            max_detections_per_image: if case % 3 == 0 { 2 } else { 100 },
            visibility_mode: if case % 2 == 0 { VisibilityMode::VisibleOnly } else { VisibilityMode::VisibleAndOccluded },
            ..EvalConfig::default()
        };
        let report = evaluate(&dets, &scenes, &table, &config).map_err(|e| e.to_string())?;
        let got = report.all_values();
        let want = oracle::values(&scenes, &dets, &table, &config);
        check(got.len() == want.len(), || format!("case {case}: {} vs {} values", got.len(), want.len()))?;
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            match (g, w) {
                (Some(g), Some(w)) => {
                    worst = worst.max((g - w).abs());
                    check((g - w).abs() <= 1e-9, || format!("case {case} value {i}: {g} vs oracle {w}"))?;
                }
                (None, None) => {}
                _ => return Err(format!("case {case} value {i}: {g:?} vs oracle {w:?}")),
            }
            compared += 1;
        }
    }
    Ok(format!("50 cases, {compared} values, max deviation {worst:.1e}"))
}

// 3. analytic checks

fn analytic_checks() -> Outcome {
    let v = iou(&BoundingBox::new(0.0, 0.0, 2.0, 2.0), &BoundingBox::new(1.0, 1.0, 3.0, 3.0));
    check(v == 1.0 / 7.0, || format!("iou = {v}"))?;

    let k: f64 = 0.025;
    let gt = GroundTruthItem {
        category_id: 1,
        bbox: BoundingBox::new(0.0, 0.0, 50.0, 50.0),
        landmarks: vec![Landmark::new(10.0, 20.0, Visibility::Visible)],
    };
    let d = (2.0 * 2500.0 * k * k).sqrt();
    let pred = [KeypointPrediction {
        x: 10.0 + d,
        y: 20.0,
        confidence: 1.0,
    }];
    let s = oks(&pred, &gt, &[k], VisibilityMode::VisibleOnly).map_err(|e| e.to_string())?.unwrap();
    check((s - (-1.0f64).exp()).abs() <= 1e-12, || format!("oks = {s}"))?;

    let table = CategoryTable::default();
    let mut t = HeadTensorSet::zeros(&table, 4, 32, 32);
    t.center[[0, 10, 10]] = 1.0;
    t.center_offset[[0, 10, 10]] = 0.3;
    t.center_offset[[1, 10, 10]] = 0.7;
    t.wh[[0, 10, 10]] = 4.0;
    t.wh[[1, 10, 10]] = 6.0;
    let dets = decode_scene(&t, &table, &DecodeConfig::default()).map_err(|e| e.to_string())?;
    let b = dets[0].bbox;
    let want = [33.2, 30.8, 49.2, 54.8];
    for (g, w) in [b.x1, b.y1, b.x2, b.y2].iter().zip(want) {
        check((g - w).abs() <= 1e-9, || format!("decoded box {b:?}"))?;
    }
    Ok("iou = 1/7, oks = e^-1, decoded box [33.2, 30.8, 49.2, 54.8]".into())
}

// 4. post-processing invariants

fn random_tensors(table: &CategoryTable, rng: &mut ChaCha8Rng) -> HeadTensorSet {
    let (h, w) = (rng.gen_range(1..24), rng.gen_range(1..24));
    let mut t = HeadTensorSet::zeros(table, 4, h, w);
    for (name, grid) in t.named_mut() {
        let signed = name == "kp_offset";
        grid.mapv_inplace(|_| if signed { rng.gen_range(-8.0..8.0) } else { rng.gen::<f64>() });
    }
    t
}

fn postprocess_invariants() -> Outcome {
    let table = CategoryTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for i in 0..100 {
        let t = random_tensors(&table, &mut rng);
        check(flip_tensors(&flip_tensors(&t, &table), &table) == t, || format!("flip not an involution on set {i}"))?;
        let fused = fuse_tensors(&[&t, &t], &[1.0, 1.0]).map_err(|e| e.to_string())?;
        check(fused == t, || format!("self-fusion changed set {i}"))?;
    }

    let mut kept = 0;
    for i in 0..1000 {
        let threshold = rng.gen_range(0.2..0.9);
        let dets: Vec<Detection> = (0..rng.gen_range(0..60))
            .map(|_| {
                let (x, y) = (rng.gen_range(0.0..100.0), rng.gen_range(0.0..100.0));
                Detection {
                    category_id: rng.gen_range(1..=3),
                    score: rng.gen_range(0..10) as f64 / 10.0,
                    bbox: BoundingBox::new(x, y, x + rng.gen_range(1.0..40.0), y + rng.gen_range(1.0..40.0)),
                    landmarks: Vec::new(),
                }
            })
            .collect();
        let out = nms(&dets, threshold);
        kept += out.len();
        for (a, da) in out.iter().enumerate() {
            check(dets.contains(da), || format!("list {i}: nms invented a detection"))?;
            for db in &out[a + 1..] {
                if da.category_id == db.category_id {
                    let v = iou(&da.bbox, &db.bbox);
                    check(v < threshold, || format!("list {i}: kept pair with iou {v} >= {threshold}"))?;
                }
            }
        }
    }
    Ok(format!("100 flip involutions and self-fusions bit-exact, 1000 NMS lists ({kept} kept) clean"))
}

// 5. strategy table via the CLI

fn strategy_table() -> Outcome {
    let out = Command::new(env!("CARGO_BIN_EXE_deepmark"))
        .args(["compare", "--seed", "0"])
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout).to_string();
    check(out.status.success(), || format!("exit {:?}: {}", out.status, String::from_utf8_lossy(&out.stderr)))?;
    let row = |name: &str| -> Result<Vec<String>, String> {
        let line = text
            .lines()
            .find(|l| l.split_whitespace().next() == Some(name))
            .ok_or_else(|| format!("no {name} row in:\n{text}"))?;
        Ok(line.split_whitespace().skip(1).map(str::to_string).collect())
    };
    for name in ["NMS", "Flip", "Multiscale"] {
        check(row(name)?.len() == 4, || format!("{name} row does not have four columns"))?;
    }
    let mut summary = Vec::new();
    for name in ["mAP_box", "mAP_pt"] {
        let values: Vec<f64> = row(name)?.iter().map(|v| v.parse().map_err(|_| format!("bad value {v}"))).collect::<Result<_, _>>()?;
        check(values.len() == 4, || format!("{name} row does not have four columns"))?;
        check(values.windows(2).all(|w| w[0] <= w[1]), || format!("{name} not monotonic: {values:?}"))?;
        summary.push(format!("{name} {values:?}"));
    }
    check(text.contains("monotonic: true"), || "unrounded values not monotonic".into())?;
    Ok(summary.join(", "))
}

// 6. latency

fn decode_latency() -> Outcome {
    let table = CategoryTable::default();
    let params = SynthParams {
        seed: 6,
        images: 1,
        width: 512,
        height: 512,
        objects_min: 8,
        objects_max: 8,
        box_min: 48.0,
        box_max: 160.0,
        ..SynthParams::default()
    };
    let scenes = synth_scenes(&params, &table).map_err(|e| e.to_string())?;
    let tensors = encode_scene(&scenes[0], &table, &params.encode).map_err(|e| e.to_string())?;
    check(tensors.center.dim() == (13, 128, 128), || format!("shape {:?}", tensors.center.dim()))?;
    let config = DecodeConfig {
        top_k: 100,
        ..DecodeConfig::default()
    };
    for _ in 0..5 {
        decode_scene(&tensors, &table, &config).map_err(|e| e.to_string())?;
    }
    let mut times: Vec<f64> = (0..101)
        .map(|_| {
            let start = Instant::now();
            let d = decode_scene(&tensors, &table, &config).expect("decode");
            std::hint::black_box(d);
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let p50 = times[50];
    check(p50 <= 10.0, || format!("p50 {p50:.2} ms"))?;
    Ok(format!("p50 {p50:.2} ms over 101 runs"))
}

// 7. equivariance

fn positive(d: Vec<Detection>) -> Vec<Detection> {
    d.into_iter().filter(|d| d.score > 0.0).collect()
}

fn equivariance() -> Outcome {
    let table = CategoryTable::default();
    let enc = EncodeParams::default();
    let config = DecodeConfig::default();
    let scenes = synth_scenes(
        &SynthParams {
            seed: 7,
            images: 200,
            ..SynthParams::default()
        },
        &table,
    )
    .map_err(|e| e.to_string())?;
    let decode = |s: &Scene| -> Result<Vec<Detection>, String> {
        let t = encode_scene(s, &table, &enc).map_err(|e| e.to_string())?;
        Ok(positive(decode_scene(&t, &table, &config).map_err(|e| e.to_string())?))
    };
    let stride = enc.stride as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for s in &scenes {
        let mut base = s.translated(4.0 * stride, 4.0 * stride);
        base.width = 192;
        base.height = 192;
        let (dx, dy) = (rng.gen_range(-4..=4) as f64 * stride, rng.gen_range(-4..=4) as f64 * stride);
        let want: Vec<Detection> = decode(&base)?.iter().map(|d| d.translated(dx, dy)).collect();
        let got = decode(&base.translated(dx, dy))?;
        check(got == want, || format!("{}: translation by ({dx}, {dy}) is not exact", s.image_id))?;

        let w = s.width as f64;
        let want: Vec<Detection> = decode(s)?
            .iter()
            .map(|d| d.mirrored(w, &table).expect("mirror"))
            .collect();
        let got = decode(&s.mirrored(&table).map_err(|e| e.to_string())?)?;
        check(got.len() == want.len(), || format!("{}: {} vs {} detections", s.image_id, got.len(), want.len()))?;
        for g in &got {
            let dist = |d: &Detection| (d.bbox.x1 - g.bbox.x1).abs() + (d.bbox.y1 - g.bbox.y1).abs();
            let m = want
                .iter()
                .filter(|d| d.category_id == g.category_id)
                .min_by(|a, b| dist(a).total_cmp(&dist(b)))
                .ok_or_else(|| format!("{}: unmatched mirrored detection", s.image_id))?;
            let mut err = (g.score - m.score).abs();
            for (a, b) in [(g.bbox.x1, m.bbox.x1), (g.bbox.y1, m.bbox.y1), (g.bbox.x2, m.bbox.x2), (g.bbox.y2, m.bbox.y2)] {
                err = err.max((a - b).abs());
            }
            for (a, b) in g.landmarks.iter().zip(&m.landmarks) {
                err = err.max((a.x - b.x).abs()).max((a.y - b.y).abs()).max((a.confidence - b.confidence).abs());
            }
            worst = worst.max(err);
            check(err <= 1e-6, || format!("{}: mirrored output off by {err}", s.image_id))?;
        }
    }
    Ok(format!("200 scenes: translations exact, mirror max deviation {worst:.1e} px"))
}

fn main() {
    let criteria: [Criterion; 7] = [
        ("1 round-trip exactness", roundtrip_exactness),
        ("2 metric oracle equivalence", metric_oracle),
        ("3 analytic spot checks", analytic_checks),
        ("4 post-processing invariants", postprocess_invariants),
        ("5 strategy comparison table", strategy_table),
        ("6 decode latency", decode_latency),
        ("7 equivariance", equivariance),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL criterion {name}: {why}");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
