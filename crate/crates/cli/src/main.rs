//! `suction`: dataset synthesis, annotation, grasp proposal, evaluation and
//! visualization.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 bad input data,
//! 3 internal invariant violation.

mod viz;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;
use serde_json::json;

use suction_core::config;
use suction_core::dataset::{generate_dataset, DatasetConfig};
use suction_core::eval::{topk_precision, EvalConfig, TopKMode, DEFAULT_LEVELS};
use suction_core::io::{self, RasterKind};
use suction_core::pipeline::{run_pipeline, PipelineConfig, PipelineInput};
use suction_core::ranking::{make_goal_poses, Policy};
use suction_core::raster::{DepthImage, SegmentationMask};
use suction_core::robot::RobotModel;
use suction_core::scene::{Pose, SceneDescription};
use suction_core::Error;

#[derive(Parser)]
#[command(name = "suction", version, about = "Suction graspability annotation and grasp proposals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an annotated synthetic dataset.
    Synth(SynthArgs),
    /// Compute quality and reachability heatmaps for one depth image.
    Annotate(AnnotateArgs),
    /// Ranked grasp candidates as JSON, end to end or from heatmaps.
    Propose(ProposeArgs),
    /// Top-k% precision of a predicted heatmap as JSON.
    Eval(EvalArgs),
    /// Render a raster to PNG.
    Viz(VizArgs),
}

#[derive(Args)]
struct Common {
    /// Robot model JSON.
    #[arg(long)]
    robot: Option<PathBuf>,
    /// Pipeline configuration JSON.
    #[arg(long)]
    pipeline: Option<PathBuf>,
    /// Seed of the IK restart streams (or of the dataset for `synth`).
    #[arg(long)]
    seed: Option<u64>,
    /// Reachability is evaluated once per stride x stride block.
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Number of scenes.
    #[arg(long, short, default_value_t = 20)]
    n: usize,
    /// Scene sampling configuration JSON.
    #[arg(long)]
    scene_config: Option<PathBuf>,
    /// Gaussian depth noise, meters.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct ViewArgs {
    /// Depth PFM; its sidecar supplies intrinsics and camera pose.
    #[arg(long)]
    depth: PathBuf,
    /// Object labels as 16-bit PGM. Without it, objects are separated
    /// from the empty bin by depth.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Scene description JSON, used for collision geometry and camera pose.
    #[arg(long)]
    scene: Option<PathBuf>,
}

#[derive(Args)]
struct AnnotateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    view: ViewArgs,
    /// Output directory for quality.pfm, reachability.pfm and timings.json.
    #[arg(long)]
    out: PathBuf,
    /// Skip the reachability stage.
    #[arg(long)]
    no_reachability: bool,
}

#[derive(Args)]
struct PolicyArgs {
    /// 1: quality only; 2: quality and reachability.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    policy: Option<u8>,
    /// Quality threshold; a pixel must exceed it.
    #[arg(long)]
    th_g: Option<f64>,
    /// Reachability threshold for policy 2.
    #[arg(long)]
    th_r: Option<f64>,
    /// Every thresholded pixel becomes a candidate.
    #[arg(long)]
    no_cluster: bool,
    /// Include the 37 approach poses of every candidate.
    #[arg(long)]
    goals: bool,
}

#[derive(Args)]
struct ProposeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Depth PFM (geometry for heatmap mode, full input otherwise).
    #[arg(long)]
    depth: PathBuf,
    /// Object labels as 16-bit PGM.
    #[arg(long)]
    seg: Option<PathBuf>,
    /// Scene description JSON.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Precomputed quality heatmap; switches to heatmap mode.
    #[arg(long)]
    quality: Option<PathBuf>,
    /// Precomputed reachability heatmap (heatmap mode).
    #[arg(long)]
    reachability: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Predicted heatmap PFM.
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth heatmap PFM.
    #[arg(long)]
    gt: PathBuf,
    /// Ground-truth pixels above this value are positives.
    #[arg(long, default_value_t = 0.5)]
    gt_threshold: f64,
    /// Fixed score thresholds for the 1, 10, 25 and 50% levels instead of
    /// percentiles.
    #[arg(long, value_delimiter = ',', value_name = "T1,T10,T25,T50")]
    fixed_thresholds: Option<Vec<f64>>,
}

#[derive(Args)]
struct VizArgs {
    /// PFM or PGM raster.
    #[arg(long)]
    input: PathBuf,
    /// Output PNG.
    #[arg(long)]
    out: PathBuf,
    /// heat, depth or labels; inferred from the sidecar when omitted.
    #[arg(long)]
    kind: Option<String>,
    /// Candidates JSON from `propose`; marks their pixels.
    #[arg(long)]
    candidates: Option<PathBuf>,
}

enum Fail {
    Usage(String),
    Data(String),
    Internal(String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        let root = match &e {
            Error::Stage { source, .. } => source.as_ref(),
            other => other,
        };
        match root {
            Error::Config(_) => Fail::Usage(msg),
            _ if e.is_data_error() => Fail::Data(msg),
            _ => Fail::Internal(msg),
        }
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail::Data(e.to_string())
    }
}

type CliResult<T = ()> = Result<T, Fail>;

fn load_pipeline(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = config::load_pipeline(common.pipeline.as_deref())?;
    if let Some(s) = common.stride {
        cfg.reach.stride = s;
    }
    if let Some(s) = common.seed {
        cfg.reach.ik.seed = s;
    }
    Ok(cfg)
}

fn load_robot(common: &Common) -> CliResult<RobotModel> {
    Ok(config::load_robot(common.robot.as_deref())?)
}

fn read_scene(path: &Path) -> CliResult<SceneDescription> {
    let text = std::fs::read_to_string(path).map_err(|e| Fail::Data(format!("{}: {e}", path.display())))?;
    Ok(SceneDescription::from_json(&text)?)
}

fn pipeline_input(depth: &Path, seg: Option<&Path>, scene: Option<&Path>) -> CliResult<PipelineInput> {
    let (depth, pose): (DepthImage, Option<Pose>) = io::load_depth(depth)?;
    let segmentation: Option<SegmentationMask> = seg.map(io::load_segmentation).transpose()?;
    let scene = scene.map(read_scene).transpose()?;
    let camera_pose = pose
        .or_else(|| scene.as_ref().map(|s| s.camera.pose.clone()))
        .ok_or_else(|| Fail::Usage("camera pose unknown: the depth sidecar has none and no --scene was given".into()))?;
    Ok(PipelineInput {
        depth,
        segmentation,
        camera_pose,
        scene,
    })
}

fn print_json(v: &serde_json::Value) -> CliResult {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)?;
    match writeln!(std::io::stdout().lock(), "{text}") {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Fail::Data(format!("stdout: {e}"))),
        _ => Ok(()),
    }
}

fn synth(a: &SynthArgs) -> CliResult {
    let pipeline = load_pipeline(&a.common)?;
    let cfg = DatasetConfig {
        scene: config::load_scene(a.scene_config.as_deref())?,
        pipeline,
        depth_noise: a.noise,
    };
    let robot = load_robot(&a.common)?;
    let seed = a.common.seed.unwrap_or(0);
    let manifest = generate_dataset(&cfg, &robot, a.n, seed, &a.out)?;
    print_json(&json!({
        "out": a.out,
        "seed": seed,
        "scenes": manifest.scenes.len(),
        "failures": manifest.failures,
    }))
}

fn annotate(a: &AnnotateArgs) -> CliResult {
    let mut cfg = load_pipeline(&a.common)?;
    cfg.reachability = !a.no_reachability;
    cfg.policy.policy = Policy::QualityOnly;
    let robot = load_robot(&a.common)?;
    let input = pipeline_input(&a.view.depth, a.view.seg.as_deref(), a.view.scene.as_deref())?;
    let ann = suction_core::pipeline::annotate(&input, &robot, &cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Fail::Data(format!("{}: {e}", a.out.display())))?;
    io::save_heatmap(&a.out.join("quality.pfm"), &ann.quality.quality, RasterKind::Quality)?;
    if let Some(r) = &ann.reachability {
        io::save_heatmap(&a.out.join("reachability.pfm"), r, RasterKind::Reachability)?;
    }
    io::save_json(&a.out.join("timings.json"), &ann.timings)?;
    print_json(&json!({
        "out": a.out,
        "surfaces": ann.segments.len(),
        "graspable_pixels": ann.graspable.count(),
        "timings": ann.timings,
    }))
}

fn propose(a: &ProposeArgs) -> CliResult {
    let mut cfg = load_pipeline(&a.common)?;
    let p = &a.policy;
    if let Some(k) = p.policy {
        cfg.policy.policy = if k == 1 { Policy::QualityOnly } else { Policy::QualityAndReachability };
    }
    if let Some(t) = p.th_g {
        cfg.policy.th_g = t;
    }
    if let Some(t) = p.th_r {
        cfg.policy.th_r = t;
    }
    if p.no_cluster {
        cfg.policy.cluster = false;
    }
    cfg.policy.validate().map_err(|e| Fail::Usage(e.to_string()))?;

    let (candidates, timings) = match &a.quality {
        Some(qpath) => {
            let (depth, _) = io::load_depth(&a.depth)?;
            let quality = io::load_heatmap(qpath)?;
            let reach = a.reachability.as_deref().map(io::load_heatmap).transpose()?;
            if cfg.policy.policy == Policy::QualityAndReachability && reach.is_none() {
                return Err(Fail::Usage("--policy 2 needs --reachability in heatmap mode".into()));
            }
            if let Some(r) = &reach {
                if !r.same_shape(&quality) {
                    return Err(Fail::Data("quality and reachability heatmaps differ in size".into()));
                }
            }
            let reach = match cfg.policy.policy {
                Policy::QualityOnly => None,
                Policy::QualityAndReachability => reach.as_ref(),
            };
            let c = suction_core::pipeline::propose_from_heatmaps(&depth, &quality, reach, &cfg.policy)?;
            (c, Vec::new())
        }
        None => {
            if cfg.policy.policy == Policy::QualityOnly {
                cfg.reachability = false;
            }
            let robot = load_robot(&a.common)?;
            let input = pipeline_input(&a.depth, a.seg.as_deref(), a.scene.as_deref())?;
            let out = run_pipeline(&input, &robot, &cfg)?;
            (out.candidates, out.timings)
        }
    };
    info!("{} candidates", candidates.len());
    let mut list = Vec::with_capacity(candidates.len());
    for c in &candidates {
        let mut v = serde_json::to_value(c)?;
        if p.goals {
            let goals: Vec<_> = make_goal_poses(c)?
                .into_iter()
                .map(|g| json!({ "p": [g.p.x, g.p.y, g.p.z], "n": [g.n.x, g.n.y, g.n.z], "theta": g.theta }))
                .collect();
            v["goal_poses"] = json!(goals);
        }
        list.push(v);
    }
    print_json(&json!({
        "frame": "camera",
        "policy": cfg.policy,
        "candidates": list,
        "timings": timings,
    }))
}

fn eval(a: &EvalArgs) -> CliResult {
    let pred = io::load_heatmap(&a.pred)?;
    let gt = io::load_heatmap(&a.gt)?;
    let cfg = EvalConfig {
        gt_threshold: a.gt_threshold,
        mode: match &a.fixed_thresholds {
            Some(t) if t.len() != DEFAULT_LEVELS.len() => {
                return Err(Fail::Usage(format!("--fixed-thresholds takes {} values, got {}", DEFAULT_LEVELS.len(), t.len())))
            }
            Some(t) => TopKMode::FixedScores(t.clone()),
            None => TopKMode::Percentile,
        },
        ..Default::default()
    };
    let report = topk_precision(&pred, &gt, &cfg)?;
    print_json(&serde_json::to_value(report)?)
}

fn viz(a: &VizArgs) -> CliResult {
    let ext = a.input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let sidecar_kind = io::read_sidecar(&a.input).ok().map(|s| s.kind);
    let kind = match (a.kind.as_deref(), sidecar_kind, ext) {
        (Some(k), ..) => k.to_string(),
        (None, Some(RasterKind::Depth), _) => "depth".into(),
        (None, Some(RasterKind::Segmentation), _) | (None, None, "pgm") => "labels".into(),
        _ => "heat".into(),
    };
    let mut img = match kind.as_str() {
        "labels" => {
            let s = io::load_segmentation(&a.input)?;
            viz::labels(s.width, s.height, &s.labels)
        }
        "depth" => {
            let bytes = std::fs::read(&a.input).map_err(|e| Fail::Data(format!("{}: {e}", a.input.display())))?;
            let (w, h, v) = io::decode_pfm(&bytes)?;
            viz::depth(w, h, &v)
        }
        "heat" => {
            let m = io::load_heatmap(&a.input)?;
            viz::heat(m.width, m.height, &m.values)
        }
        other => return Err(Fail::Usage(format!("unknown --kind {other:?}; use heat, depth or labels"))),
    };
    if let Some(path) = &a.candidates {
        let text = std::fs::read_to_string(path).map_err(|e| Fail::Data(format!("{}: {e}", path.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text)?;
        let pixels: Vec<[usize; 2]> = v["candidates"]
            .as_array()
            .ok_or_else(|| Fail::Data(format!("{}: no candidates array", path.display())))?
            .iter()
            .filter_map(|c| serde_json::from_value(c["pixel"].clone()).ok())
            .collect();
        viz::mark(&mut img, &pixels);
    }
    img.save(&a.out).map_err(|e| Fail::Data(format!("{}: {e}", a.out.display())))?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Synth(a) => synth(a),
        Command::Annotate(a) => annotate(a),
        Command::Propose(a) => propose(a),
        Command::Eval(a) => eval(a),
        Command::Viz(a) => viz(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Fail::Data(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Fail::Internal(m)) => {
            eprintln!("internal error: {m}");
            ExitCode::from(3)
        }
    }
}
