use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use deepmark::category::{load_category_table, CategoryTable};
use deepmark::decode::DecodeConfig;
use deepmark::encode::{encode_scene_with_warnings, EncodeParams};
use deepmark::error::Error;
use deepmark::harness::annotations::{parse_json, read_annotations, read_detections, write_annotations, write_detections};
use deepmark::harness::bench::{bench_decode, BenchConfig, BenchReport, DECODE};
use deepmark::harness::compare::{compare_strategies, CompareParams};
use deepmark::harness::container::{read_container_file, write_container_file};
use deepmark::harness::plot::{pr_curves_csv, speed_accuracy_svg, SpeedPoint};
use deepmark::harness::synth::{synth_scenes, SynthParams};
use deepmark::harness::{encode_view, roundtrip, view_file_name, with_workers};
use deepmark::metrics::{evaluate, pr_curves, EvalConfig, MetricReport, VisibilityMode};
use deepmark::postprocess::{flip_tensors, fuse_tensors, run_strategy, FusionConfig, ScaleView};
use deepmark::scene::{Detection, Scene};

#[derive(Parser)]
#[command(name = "deepmark", version, about = "Encode, decode, fuse and evaluate landmark detection head outputs")]
struct Cli {
    /// Category table JSON (defaults to the built-in DeepFashion2 table).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic annotated scenes.
    Synth {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Render training targets for annotated scenes into tensor containers.
    Encode {
        #[arg(long, value_name = "FILE")]
        annotations: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        encode: EncodeArgs,
        /// Also write the mirrored view of every scale.
        #[arg(long)]
        flip: bool,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Decode tensor containers into detections.
    Decode {
        /// A directory of containers or a single `.dmrk` file.
        #[arg(long, value_name = "PATH")]
        tensors: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        #[command(flatten)]
        decode: DecodeArgs,
        /// Enable NMS at this IoU threshold.
        #[arg(long)]
        nms_iou: Option<f64>,
        /// Fuse each view with its mirrored companion.
        #[arg(long)]
        flip: bool,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        scales: Vec<f64>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Weighted average of tensor containers.
    Fuse {
        #[arg(long = "input", value_name = "FILE")]
        inputs: Vec<PathBuf>,
        /// Mirrored views; mapped back to the original frame before fusing.
        #[arg(long = "flipped", value_name = "FILE")]
        flipped: Vec<PathBuf>,
        /// One weight per input, inputs first then flipped views; equal if omitted.
        #[arg(long, value_delimiter = ',')]
        weights: Vec<f64>,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Score detections against annotations.
    Eval {
        #[arg(long, value_name = "FILE")]
        annotations: PathBuf,
        #[arg(long, value_name = "FILE")]
        detections: PathBuf,
        /// Directory for report.json and report.csv.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Mode::Visible)]
        mode: Mode,
        /// Per-keypoint OKS constants: a JSON array or {"sigmas": [...]}.
        #[arg(long, value_name = "FILE")]
        sigmas: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        max_dets: usize,
        /// Directory for precision-recall points and the speed-accuracy plot.
        #[arg(long, value_name = "DIR")]
        plot: Option<PathBuf>,
        /// Benchmark report placing this run on the speed axis of the plot.
        #[arg(long, value_name = "FILE")]
        bench: Option<PathBuf>,
    },
    /// Time decoding and post-processing stages.
    Bench {
        /// Containers to time; synthetic scenes are generated when omitted.
        #[arg(long, value_name = "DIR")]
        tensors: Option<PathBuf>,
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, default_value_t = 50)]
        iterations: usize,
        #[arg(long, default_value_t = 5)]
        warmup: usize,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
        #[arg(long)]
        flip: bool,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        scales: Vec<f64>,
        #[arg(long, value_name = "FILE")]
        out: Option<PathBuf>,
    },
    /// Synthesize, encode, decode and evaluate in one pass.
    Roundtrip {
        #[command(flatten)]
        synth: SynthArgs,
        #[command(flatten)]
        decode: DecodeArgs,
        #[arg(long, value_enum, default_value_t = Mode::Visible)]
        mode: Mode,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Compare post-processing strategies on noisy synthetic outputs.
    Compare {
        #[command(flatten)]
        synth: SynthArgs,
        #[arg(long, value_enum, default_value_t = Mode::Visible)]
        mode: Mode,
        #[arg(long, default_value_t = 0.5)]
        nms_iou: f64,
        /// Report mean time per image for each strategy.
        #[arg(long)]
        timing: bool,
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Directory for the speed-accuracy plot (implies --timing).
        #[arg(long, value_name = "DIR")]
        plot: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Visible,
    All,
}

impl From<Mode> for VisibilityMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Visible => VisibilityMode::VisibleOnly,
            Mode::All => VisibilityMode::VisibleAndOccluded,
        }
    }
}

#[derive(Args, Clone)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    images: Option<usize>,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    objects_min: Option<usize>,
    #[arg(long)]
    objects_max: Option<usize>,
    #[arg(long)]
    box_min: Option<f64>,
    #[arg(long)]
    box_max: Option<f64>,
    /// Landmark half-width around the box center, px.
    #[arg(long)]
    scatter: Option<f64>,
    #[arg(long)]
    occlusion: Option<f64>,
    #[arg(long)]
    unlabeled: Option<f64>,
    #[arg(long)]
    min_visible: Option<usize>,
    /// Allow objects and landmarks to crowd each other.
    #[arg(long)]
    no_separation: bool,
    #[command(flatten)]
    encode: EncodeArgs,
}

impl SynthArgs {
    fn params(&self, base: SynthParams) -> SynthParams {
        SynthParams {
            seed: self.seed,
            images: self.images.unwrap_or(base.images),
            width: self.width.unwrap_or(base.width),
            height: self.height.unwrap_or(base.height),
            objects_min: self.objects_min.unwrap_or(base.objects_min),
            objects_max: self.objects_max.unwrap_or(base.objects_max),
            box_min: self.box_min.unwrap_or(base.box_min),
            box_max: self.box_max.unwrap_or(base.box_max),
            scatter_radius: self.scatter.unwrap_or(base.scatter_radius),
            occlusion_prob: self.occlusion.unwrap_or(base.occlusion_prob),
            unlabeled_prob: self.unlabeled.unwrap_or(base.unlabeled_prob),
            separated: !self.no_separation,
            min_visible: self.min_visible.unwrap_or(base.min_visible),
            encode: self.encode.params(),
            view_scales: base.view_scales,
        }
    }
}

#[derive(Args, Clone)]
struct EncodeArgs {
    #[arg(long, default_value_t = 4)]
    stride: u32,
    #[arg(long, default_value_t = 0.7)]
    min_overlap: f64,
}

impl EncodeArgs {
    fn params(&self) -> EncodeParams {
        EncodeParams {
            stride: self.stride,
            min_overlap: self.min_overlap,
            ..EncodeParams::default()
        }
    }
}

#[derive(Args, Clone)]
struct DecodeArgs {
    #[arg(long, default_value_t = 100)]
    topk: usize,
    #[arg(long, default_value_t = 0.0)]
    min_score: f64,
    #[arg(long, default_value_t = 0.1)]
    min_kp_score: f64,
}

impl DecodeArgs {
    fn config(&self) -> DecodeConfig {
        DecodeConfig {
            top_k: self.topk,
            min_center_score: self.min_score,
            min_kp_candidate_score: self.min_kp_score,
            ..DecodeConfig::default()
        }
    }
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Param { .. } => Failure::Usage(e.to_string()),
            other => Failure::Data(other),
        }
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    fs::write(path, text).map_err(|e| Failure::Data(Error::Io {
        path: path.to_path_buf(),
        source: e,
    }))
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))
}

fn load_table(path: Option<&Path>) -> CliResult<CategoryTable> {
    match path {
        Some(p) => Ok(load_category_table(&read_text(p)?)?),
        None => Ok(CategoryTable::default()),
    }
}

fn load_scenes(path: &Path, table: &CategoryTable) -> CliResult<Vec<Scene>> {
    let loaded = read_annotations(&read_text(path)?, table)?;
    if loaded.clamped > 0 {
        eprintln!("warning: clamped {} coordinate(s) into image bounds", loaded.clamped);
    }
    Ok(loaded.scenes)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum SigmaFile {
    List(Vec<f64>),
    Object { sigmas: Vec<f64> },
}

fn write_report(dir: &Path, report: &MetricReport) -> CliResult {
    create_dir(dir)?;
    write_text(&dir.join("report.json"), &(report.to_json() + "\n"))?;
    write_text(&dir.join("report.csv"), &report.to_csv())
}

/// Image ids of the base views in a tensor directory, sorted.
fn image_ids(dir: &Path) -> CliResult<Vec<String>> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(Error::Io {
        path: dir.to_path_buf(),
        source: e,
    }))?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().to_str().map(str::to_string))
        .filter_map(|n| n.strip_suffix(".dmrk").map(str::to_string))
        .filter(|stem| !stem.contains('.'))
        .collect();
    ids.sort();
    Ok(ids)
}

fn load_views(dir: &Path, id: &str, scales: &[f64], flip: bool) -> deepmark::Result<Vec<ScaleView>> {
    scales
        .iter()
        .map(|&scale| {
            let tensors = read_container_file(&dir.join(view_file_name(id, scale, false)))?;
            let flipped = if flip {
                Some(read_container_file(&dir.join(view_file_name(id, scale, true)))?)
            } else {
                None
            };
            Ok(ScaleView {
                scale,
                tensors,
                flipped,
            })
        })
        .collect()
}

fn cmd_synth(table: &CategoryTable, synth: &SynthArgs, out: &Path) -> CliResult {
    let scenes = synth_scenes(&synth.params(SynthParams::default()), table)?;
    write_text(out, &write_annotations(&scenes))?;
    println!("wrote {} scene(s) to {}", scenes.len(), out.display());
    Ok(())
}

fn cmd_encode(
    table: &CategoryTable,
    annotations: &Path,
    out: &Path,
    encode: &EncodeArgs,
    flip: bool,
    scales: &[f64],
    workers: usize,
) -> CliResult {
    let scenes = load_scenes(annotations, table)?;
    let params = encode.params();
    create_dir(out)?;
    let collisions: Vec<usize> = with_workers(workers, || {
        scenes
            .par_iter()
            .map(|scene| {
                let (_, w) = encode_scene_with_warnings(scene, table, &params)?;
                for &scale in scales {
                    let view = encode_view(scene, table, &params, scale, flip)?;
                    write_container_file(&out.join(view_file_name(&scene.image_id, scale, false)), &view.tensors)?;
                    if let Some(f) = &view.flipped {
                        write_container_file(&out.join(view_file_name(&scene.image_id, scale, true)), f)?;
                    }
                }
                Ok(w.center_collisions + w.refine_collisions)
            })
            .collect::<deepmark::Result<Vec<_>>>()
    })??;
    let total: usize = collisions.iter().sum();
    if total > 0 {
        eprintln!("warning: {total} target collision(s); later objects lost shared cells");
    }
    println!("encoded {} scene(s) into {}", scenes.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_decode(
    table: &CategoryTable,
    tensors: &Path,
    out: &Path,
    decode: &DecodeArgs,
    nms_iou: Option<f64>,
    flip: bool,
    scales: &[f64],
    workers: usize,
) -> CliResult {
    let config = decode.config();
    config.validate()?;
    let fusion = FusionConfig {
        nms_enabled: nms_iou.is_some(),
        nms_iou_threshold: nms_iou.unwrap_or(0.5),
        flip_enabled: flip,
        scales: scales.to_vec(),
        weights: Vec::new(),
    };
    fusion.validate()?;

    let (dir, ids) = if tensors.is_file() {
        let stem = tensors
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_suffix(".dmrk"))
            .ok_or_else(|| Failure::Usage(format!("{}: expected a .dmrk file", tensors.display())))?;
        let dir = tensors.parent().unwrap_or(Path::new(".")).to_path_buf();
        (dir, vec![stem.to_string()])
    } else {
        (tensors.to_path_buf(), image_ids(tensors)?)
    };

    let per_image: Vec<Vec<Detection>> = with_workers(workers, || {
        ids.par_iter()
            .map(|id| {
                let views = load_views(&dir, id, scales, flip)?;
                run_strategy(&views, table, &config, &fusion)
            })
            .collect::<deepmark::Result<Vec<_>>>()
    })??;
    let detections: BTreeMap<String, Vec<Detection>> = ids.iter().cloned().zip(per_image).collect();
    write_text(out, &write_detections(&detections))?;
    let n: usize = detections.values().map(Vec::len).sum();
    println!("decoded {n} detection(s) from {} image(s)", detections.len());
    Ok(())
}

fn cmd_fuse(table: &CategoryTable, inputs: &[PathBuf], flipped: &[PathBuf], weights: &[f64], out: &Path) -> CliResult {
    if inputs.is_empty() && flipped.is_empty() {
        return Err(Failure::Usage("fuse needs at least one --input or --flipped file".into()));
    }
    let mut sets = Vec::new();
    for p in inputs {
        sets.push(read_container_file(p)?);
    }
    for p in flipped {
        sets.push(flip_tensors(&read_container_file(p)?, table));
    }
    let weights = if weights.is_empty() {
        vec![1.0; sets.len()]
    } else {
        weights.to_vec()
    };
    let refs: Vec<_> = sets.iter().collect();
    let fused = fuse_tensors(&refs, &weights)?;
    write_container_file(out, &fused)?;
    println!("fused {} tensor set(s) into {}", sets.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval(
    table: CategoryTable,
    annotations: &Path,
    detections: &Path,
    out: Option<&Path>,
    mode: Mode,
    sigmas: Option<&Path>,
    max_dets: usize,
    plot: Option<&Path>,
    bench: Option<&Path>,
) -> CliResult {
    let table = match sigmas {
        Some(p) => {
            let values = match parse_json::<SigmaFile>(&read_text(p)?)? {
                SigmaFile::List(v) | SigmaFile::Object { sigmas: v } => v,
            };
            table.with_sigmas(values)?
        }
        None => table,
    };
    let scenes = load_scenes(annotations, &table)?;
    let dets = read_detections(&read_text(detections)?, &table)?;
    let config = EvalConfig {
        visibility_mode: mode.into(),
        max_detections_per_image: max_dets,
        ..EvalConfig::default()
    };
    let report = evaluate(&dets, &scenes, &table, &config)?;
    print!("{}", report.summary());
    if let Some(dir) = out {
        write_report(dir, &report)?;
    }
    if let Some(dir) = plot {
        create_dir(dir)?;
        let curves = pr_curves(&dets, &scenes, &table, &config)?;
        write_text(&dir.join("pr_curves.csv"), &pr_curves_csv(&curves))?;
        match bench {
            Some(b) => {
                let report_b: BenchReport = parse_json(&read_text(b)?)?;
                let time = report_b
                    .stage(DECODE)
                    .ok_or_else(|| Failure::Usage(format!("{}: no decode stage", b.display())))?
                    .p50_ms;
                let point = SpeedPoint {
                    label: "decode".into(),
                    time_ms: time,
                    map_box: report.bbox.map.unwrap_or(0.0),
                    map_pt: report.pt(config.visibility_mode).map.unwrap_or(0.0),
                };
                write_text(&dir.join("speed_accuracy.svg"), &speed_accuracy_svg(&[point]))?;
            }
            None => eprintln!("note: pass --bench to place this run on the speed-accuracy plot"),
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bench(
    table: &CategoryTable,
    tensors: Option<&Path>,
    synth: &SynthArgs,
    decode: &DecodeArgs,
    iterations: usize,
    warmup: usize,
    nms_iou: f64,
    flip: bool,
    scales: &[f64],
    out: Option<&Path>,
) -> CliResult {
    let images: Vec<Vec<ScaleView>> = match tensors {
        Some(dir) => image_ids(dir)?
            .iter()
            .map(|id| load_views(dir, id, scales, flip))
            .collect::<deepmark::Result<_>>()?,
        None => {
            let base = SynthParams {
                images: 1,
                width: 512,
                height: 512,
                objects_max: 8,
                box_min: 48.0,
                box_max: 160.0,
                ..SynthParams::default()
            };
            let params = synth.params(base);
            synth_scenes(&params, table)?
                .iter()
                .map(|s| {
                    scales
                        .iter()
                        .map(|&sc| encode_view(s, table, &params.encode, sc, flip))
                        .collect::<deepmark::Result<Vec<_>>>()
                })
                .collect::<deepmark::Result<_>>()?
        }
    };
    let config = BenchConfig {
        iterations,
        warmup,
        decode: decode.config(),
        fusion: FusionConfig {
            nms_enabled: true,
            nms_iou_threshold: nms_iou,
            flip_enabled: flip,
            scales: scales.to_vec(),
            weights: Vec::new(),
        },
    };
    let report = bench_decode(&images, table, &config)?;
    print!("{}", report.to_text());
    if let Some(p) = out {
        write_text(p, &(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"))?;
    }
    Ok(())
}

fn cmd_roundtrip(
    table: &CategoryTable,
    synth: &SynthArgs,
    decode: &DecodeArgs,
    mode: Mode,
    out: Option<&Path>,
    workers: usize,
) -> CliResult {
    let params = synth.params(SynthParams::default());
    let scenes = synth_scenes(&params, table)?;
    let eval = EvalConfig {
        visibility_mode: mode.into(),
        ..EvalConfig::default()
    };
    let outcome = roundtrip(&scenes, table, &params.encode, &decode.config(), &eval, workers)?;
    let w = &outcome.warnings;
    if w.center_collisions + w.refine_collisions > 0 {
        eprintln!(
            "warning: {} center and {} landmark target collision(s)",
            w.center_collisions, w.refine_collisions
        );
    }
    print!("{}", outcome.report.summary());
    if let Some(dir) = out {
        write_report(dir, &outcome.report)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    table: &CategoryTable,
    synth: &SynthArgs,
    mode: Mode,
    nms_iou: f64,
    timing: bool,
    out: Option<&Path>,
    plot: Option<&Path>,
    workers: usize,
) -> CliResult {
    let base = CompareParams::default();
    let params = CompareParams {
        synth: synth.params(base.synth.clone()),
        eval: EvalConfig {
            visibility_mode: mode.into(),
            ..EvalConfig::default()
        },
        nms_iou_threshold: nms_iou,
        timing: timing || plot.is_some(),
        workers,
        ..base
    };
    let table_out = compare_strategies(&params, table)?;
    print!("{}", table_out.to_text());
    if let Some(dir) = out {
        create_dir(dir)?;
        write_text(&dir.join("strategies.csv"), &table_out.to_csv())?;
    }
    if let Some(dir) = plot {
        create_dir(dir)?;
        let names = ["none", "NMS", "+flip", "+multiscale"];
        let points: Vec<SpeedPoint> = table_out
            .columns
            .iter()
            .zip(names)
            .map(|(c, name)| SpeedPoint {
                label: name.into(),
                time_ms: c.time_ms.unwrap_or(0.0),
                map_box: c.map_box.unwrap_or(0.0),
                map_pt: c.map_pt.unwrap_or(0.0),
            })
            .collect();
        write_text(&dir.join("speed_accuracy.svg"), &speed_accuracy_svg(&points))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    let table = load_table(cli.config.as_deref())?;
    match cli.command {
        Command::Synth { synth, out } => cmd_synth(&table, &synth, &out),
        Command::Encode {
            annotations,
            out,
            encode,
            flip,
            scales,
            workers,
        } => cmd_encode(&table, &annotations, &out, &encode, flip, &scales, workers),
        Command::Decode {
            tensors,
            out,
            decode,
            nms_iou,
            flip,
            scales,
            workers,
        } => cmd_decode(&table, &tensors, &out, &decode, nms_iou, flip, &scales, workers),
        Command::Fuse {
            inputs,
            flipped,
            weights,
            out,
        } => cmd_fuse(&table, &inputs, &flipped, &weights, &out),
        Command::Eval {
            annotations,
            detections,
            out,
            mode,
            sigmas,
            max_dets,
            plot,
            bench,
        } => cmd_eval(
            table,
            &annotations,
            &detections,
            out.as_deref(),
            mode,
            sigmas.as_deref(),
            max_dets,
            plot.as_deref(),
            bench.as_deref(),
        ),
        Command::Bench {
            tensors,
            synth,
            decode,
            iterations,
            warmup,
            nms_iou,
            flip,
            scales,
            out,
        } => cmd_bench(
            &table,
            tensors.as_deref(),
            &synth,
            &decode,
            iterations,
            warmup,
            nms_iou,
            flip,
            &scales,
            out.as_deref(),
        ),
        Command::Roundtrip {
            synth,
            decode,
            mode,
            out,
            workers,
        } => cmd_roundtrip(&table, &synth, &decode, mode, out.as_deref(), workers),
        Command::Compare {
            synth,
            mode,
            nms_iou,
            timing,
            out,
            plot,
            workers,
        } => cmd_compare(&table, &synth, mode, nms_iou, timing, out.as_deref(), plot.as_deref(), workers),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
