use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use roomlayout::densemaps::LEVEL_NAMES;
use roomlayout::geometry::rotation_to_wxyz;
use roomlayout::metrics::evaluate_layout;
use roomlayout::multiroom::{multiroom_run, MultiRoomConfig, RoomEvent, SharingFlags};
use roomlayout::pipeline::{fit_scene, InitMode, PipelineConfig};
use roomlayout::solver::{warp_error, SUCCESS_THRESHOLD_PX};
use roomlayout::synthscene::{generate_room, generate_two_room_stream, SynthParams};
use roomlayout::{CostConfig, Cuboid, LmConfig, StopMode};
use serde_json::{json, Value};

use crate::manifest::{export_room, export_stream, load_scene, read_cuboid_json, read_manifest};
use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "roomlayout", version, about = "Cuboid room layouts from posed images")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one cuboid to every frame of a manifest.
    Fit(FitArgs),
    /// Compare a predicted cuboid against ground truth.
    Eval(EvalArgs),
    /// Write a synthetic scene as a manifest directory.
    Synth(SynthArgs),
    /// Sequential multi-room layout over an ordered frame stream.
    Multiroom(MultiroomArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Fixed,
    Converge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitArg {
    Auto,
    Random,
    Provided,
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    #[arg(long, default_value_t = 40.0)]
    pub beta: f64,
    /// VP distance cap in normalized image coordinates.
    #[arg(long, default_value_t = 0.05)]
    pub tau: f64,
    /// Sample points per image and level.
    #[arg(long, default_value_t = 512)]
    pub points: usize,
    #[arg(long, default_value_t = 4.0)]
    pub gamma: f64,
    /// Iterations per level (fixed) or the iteration cap (converge).
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeArg::Fixed)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = InitArg::Auto)]
    pub init: InitArg,
    /// Cuboid JSON used with `--init provided`.
    #[arg(long)]
    pub init_cuboid: Option<PathBuf>,
    #[arg(long, default_value_t = roomlayout::init::DEFAULT_VP_REFINE_ITERS)]
    pub vp_refine: usize,
    /// Pyramid levels to run, coarse first.
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fixed-order reductions, so repeated runs are bit-identical.
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Predicted cuboid; fit output is accepted as is.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth cuboid; defaults to the manifest's gt_cuboid.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    #[arg(long)]
    pub manifest: PathBuf,
    /// Seed for chamfer surface sampling.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub deterministic: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub rooms: u8,
    /// Cameras per room.
    #[arg(long)]
    pub cameras: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub deterministic: bool,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct MultiroomArgs {
    pub manifest: PathBuf,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long, default_value_t = 60)]
    pub subsample: usize,
    #[arg(long, default_value_t = 8)]
    pub frames_per_room: usize,
    #[arg(long, default_value_t = 0.01)]
    pub overlap_iou: f64,
    #[arg(long)]
    pub no_share_orientation: bool,
    #[arg(long)]
    pub no_share_floor_ceiling: bool,
    #[arg(long)]
    pub no_share_walls: bool,
    /// Layout JSON; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// OBJ wireframe; defaults to the layout path with an `.obj` extension.
    #[arg(long)]
    pub obj: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// The solver never accepted a step.
    NoProgress,
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    match &cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Synth(a) => cmd_synth(a),
        Command::Multiroom(a) => cmd_multiroom(a),
    }
}

impl SolverArgs {
    pub fn pipeline_config(&self) -> Result<PipelineConfig, CliError> {
        let init = match (self.init, &self.init_cuboid) {
            (InitArg::Auto, None) => InitMode::Auto,
            (InitArg::Random, None) => InitMode::Random,
            (InitArg::Provided, Some(p)) => InitMode::Provided(read_cuboid_json(p)?),
            (InitArg::Provided, None) => return Err(CliError::Usage("--init provided needs --init-cuboid".into())),
            (_, Some(_)) => return Err(CliError::Usage("--init-cuboid requires --init provided".into())),
        };
        let cost = CostConfig {
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            points_per_image: self.points,
            gamma: self.gamma,
            deterministic: self.deterministic,
            ..CostConfig::default()
        };
        cost.validate().map_err(CliError::Usage)?;
        let mut lm = match self.mode {
            ModeArg::Fixed => LmConfig::default(),
            ModeArg::Converge => LmConfig::converge(),
        };
        if let Some(n) = self.iters {
            lm.mode = match lm.mode {
                StopMode::FixedIters { .. } => StopMode::FixedIters { iters: n },
                StopMode::Converge { rel_tol, step_tol, .. } => StopMode::Converge { rel_tol, step_tol, max_iters: n },
            };
        }
        lm.levels = self.levels;
        lm.validate().map_err(CliError::Usage)?;
        Ok(PipelineConfig { init, vp_refine_iters: self.vp_refine, cost, lm, ..PipelineConfig::default() })
    }
}

fn cuboid_json(c: &Cuboid) -> Value {
    json!({ "rotation": rotation_to_wxyz(c.rotation()), "offsets": c.offsets() })
}

fn write_output(out: Option<&Path>, value: &Value) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    match out {
        Some(path) => fs::write(path, text).map_err(|source| CliError::Io { path: path.to_path_buf(), source }),
        None => std::io::stdout()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io { path: PathBuf::from("<stdout>"), source }),
    }
}

pub fn cmd_fit(args: &FitArgs) -> Result<Outcome, CliError> {
    let config = args.solver.pipeline_config()?;
    let loaded = read_manifest(&args.manifest)?;
    let scene = load_scene(&loaded)?;
    log::info!("fitting {} frames from {}", scene.len(), args.manifest.display());
    let mut rng = ChaCha8Rng::seed_from_u64(args.solver.seed);
    let out = fit_scene(&scene, &config, &mut rng)?;
    let fit = &out.fit;
    let scales: Vec<Value> = fit
        .scales
        .iter()
        .map(|s| {
            json!({
                "level": LEVEL_NAMES[s.level],
                "rotation": rotation_to_wxyz(s.cuboid.rotation()),
                "offsets": s.cuboid.offsets(),
                "cost_trajectory": s.trajectory,
                "iterations": s.iterations,
                "accepted_steps": s.accepted_steps,
                "no_progress": s.no_progress,
                "success": s.success,
                "warp_error_px": s.warp_error,
            })
        })
        .collect();
    let cub = fit.cuboid();
    let value = json!({
        "rotation": rotation_to_wxyz(cub.rotation()),
        "offsets": cub.offsets(),
        "init": cuboid_json(&out.init),
        "scales": scales,
        "success": fit.success(),
        "no_progress": fit.no_progress(),
        "seed": args.solver.seed,
    });
    write_output(args.out.as_deref(), &value)?;
    Ok(if fit.no_progress() { Outcome::NoProgress } else { Outcome::Success })
}

pub fn cmd_eval(args: &EvalArgs) -> Result<Outcome, CliError> {
    let loaded = read_manifest(&args.manifest)?;
    let pred = read_cuboid_json(&args.pred)?;
    let gt = match (&args.gt, &loaded.gt_cuboid) {
        (Some(p), _) => read_cuboid_json(p)?,
        (None, Some(g)) => g.clone(),
        (None, None) => return Err(CliError::Usage("no --gt given and the manifest has no gt_cuboid".into())),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut report = evaluate_layout(&pred, &gt, &loaded.cameras, &mut rng);
    if !loaded.correspondences.is_empty() {
        let err = warp_error(&pred, &loaded.cameras, &loaded.correspondences);
        report.success = Some(err.is_ok_and(|e| e < SUCCESS_THRESHOLD_PX));
    }
    let value = serde_json::to_value(&report).expect("report serializes");
    write_output(args.out.as_deref(), &value)?;
    Ok(Outcome::Success)
}

pub fn cmd_synth(args: &SynthArgs) -> Result<Outcome, CliError> {
    let defaults = SynthParams::default();
    let params = SynthParams {
        n_cameras: args.cameras.unwrap_or(defaults.n_cameras),
        width: args.width.unwrap_or(defaults.width),
        height: args.height.unwrap_or(defaults.height),
        ..defaults
    };
    let path = if args.rooms == 2 {
        export_stream(&generate_two_room_stream(args.seed, &params)?, &args.out)?
    } else {
        export_room(&generate_room(args.seed, &params)?, &args.out)?
    };
    write_output(None, &json!({ "manifest": path }))?;
    Ok(Outcome::Success)
}

pub fn cmd_multiroom(args: &MultiroomArgs) -> Result<Outcome, CliError> {
    let pipeline = args.solver.pipeline_config()?;
    if matches!(pipeline.init, InitMode::Provided(_)) {
        return Err(CliError::Usage("multiroom does not take a provided init".into()));
    }
    let config = MultiRoomConfig {
        subsample_factor: args.subsample,
        frames_per_room: args.frames_per_room,
        overlap_iou_max: args.overlap_iou,
        shared: SharingFlags {
            orientation: !args.no_share_orientation,
            floor_ceiling: !args.no_share_floor_ceiling,
            walls: !args.no_share_walls,
        },
    };
    config.validate().map_err(CliError::Usage)?;
    let loaded = read_manifest(&args.manifest)?;
    let scene = load_scene(&loaded)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.solver.seed);
    let layout = multiroom_run(&scene, &config, &pipeline, &mut rng)?;
    log::info!("{} rooms accepted from {} frames", layout.rooms.len(), scene.len());
    let mut value = layout.to_json();
    value["events"] = serde_json::to_value(&layout.events).expect("events serialize");
    write_output(args.out.as_deref(), &value)?;
    let obj_path = args.obj.clone().or_else(|| args.out.as_ref().map(|p| p.with_extension("obj")));
    if let Some(p) = obj_path {
        fs::write(&p, layout.to_obj()).map_err(|source| CliError::Io { path: p.clone(), source })?;
    }
    let stalled = layout.rooms.is_empty()
        && layout.events.iter().any(|e| matches!(e, RoomEvent::Rejected { no_progress: true, .. }));
    Ok(if stalled { Outcome::NoProgress } else { Outcome::Success })
}
