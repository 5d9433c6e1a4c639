//! `mapweld` command line: every pipeline stage as a subcommand plus the
//! review HTTP service.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use mapweld_core::io::{self, write_atomic};
use mapweld_core::labeling::{self, LabelParams, LaneSpec};
use mapweld_core::metrics::{self, ApThresholds, ChamferParams};
use mapweld_core::raster::{self, GridSpec};
use mapweld_core::skeleton::{self, ExtractParams};
use mapweld_core::synth::{self, NoiseSpec, ScenarioKind, ScenarioSpec};
use mapweld_core::updater::{self, Decision, FlagParams};
use mapweld_core::{Error, PerceptionWindow};
use serde_json::json;

pub mod serve;

#[derive(Debug, Parser)]
#[command(name = "mapweld", version, about = "Offline HD map maintenance from vector map predictions")]
pub struct Cli {
    /// Structured JSON logs on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario and simulated frame predictions.
    Synth(SynthArgs),
    /// Auto-label a ground-truth map from a pose trace and a point cloud.
    Label(LabelArgs),
    /// Accumulate frame predictions into per-class count grids.
    Accumulate(AccumulateArgs),
    /// Threshold a count grid into binary masks.
    Mask(MaskArgs),
    /// Threshold, thin and vectorize a count grid.
    Extract(ExtractArgs),
    /// Score a predicted map against a reference map.
    Eval(EvalArgs),
    /// Flag cells where new elements disagree with the existing map.
    Flag(FlagArgs),
    /// Record a decision for one proposal cell.
    Decide(DecideArgs),
    /// Merge accepted cells into the existing map.
    Merge(MergeArgs),
    /// Host the review HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub scenario: String,
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long)]
    pub length: Option<f64>,
    #[arg(long)]
    pub lanes: Option<usize>,
    #[arg(long)]
    pub arms: Option<usize>,
    #[arg(long)]
    pub half_width: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub noise_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub dropout: f64,
    /// Expected spurious elements per frame.
    #[arg(long, default_value_t = 0.0)]
    pub spurious_rate: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Meters between frames along the drive path.
    #[arg(long, default_value_t = 2.0)]
    pub step: f64,
    #[arg(long)]
    pub out_gt: PathBuf,
    #[arg(long)]
    pub out_frames: PathBuf,
    /// Optional CSV of the frame poses.
    #[arg(long)]
    pub out_poses: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub cloud: PathBuf,
    #[arg(long, default_value_t = labeling::DEFAULT_HALF_WIDTH)]
    pub half_width: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AccumulateArgs {
    #[arg(long)]
    pub frames: PathBuf,
    #[arg(long, default_value_t = raster::DEFAULT_RESOLUTION)]
    pub resolution: f64,
    #[arg(long)]
    pub out: PathBuf,
    /// File name stem inside the output directory.
    #[arg(long, default_value = "grid")]
    pub stem: String,
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = raster::DEFAULT_THRESHOLD)]
    pub threshold: u32,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mask")]
    pub stem: String,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long, default_value_t = raster::DEFAULT_THRESHOLD)]
    pub threshold: u32,
    #[arg(long, default_value_t = 2.0)]
    pub min_length: f64,
    #[arg(long, default_value_t = 0.25)]
    pub simplify: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Also score every cell of a lattice with this cell size (meters).
    #[arg(long)]
    pub per_cell: Option<f64>,
    /// Matching thresholds in meters.
    #[arg(long, value_delimiter = ',', default_values_t = [0.5, 1.0, 1.5])]
    pub thresholds: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub sample_step: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FlagArgs {
    #[arg(long)]
    pub new: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long, default_value_t = updater::DEFAULT_UPDATE_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, default_value_t = metrics::DEFAULT_CELL_SIZE)]
    pub cell_size: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("verdict").required(true).args(["accept", "reject"])))]
pub struct DecideArgs {
    #[arg(long)]
    pub proposal: PathBuf,
    #[arg(long)]
    pub cell: String,
    #[arg(long)]
    pub accept: bool,
    #[arg(long)]
    pub reject: bool,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub new: PathBuf,
    #[arg(long)]
    pub proposal: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Accept every cell before merging.
    #[arg(long, conflicts_with = "reject_all")]
    pub accept_all: bool,
    /// Reject every cell before merging.
    #[arg(long)]
    pub reject_all: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub new: PathBuf,
    #[arg(long)]
    pub proposal: PathBuf,
    /// Grid directory for the heatmap endpoint.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    /// Static review UI assets.
    #[arg(long)]
    pub ui_dir: Option<PathBuf>,
}

/// Progress reporting: human text, or one JSON object per line.
#[derive(Debug, Clone, Copy)]
pub struct Logger {
    pub verbose: bool,
}

impl Logger {
    pub fn info(&self, event: &str, text: &str, fields: serde_json::Value) {
        if self.verbose {
            let mut line = json!({"level": "info", "event": event, "message": text});
            if let (Some(obj), serde_json::Value::Object(extra)) = (line.as_object_mut(), fields) {
                obj.extend(extra);
            }
            eprintln!("{line}");
        } else {
            eprintln!("{text}");
        }
    }
}

/// Single-line structured form of a domain error.
pub fn error_line(e: &Error) -> String {
    json!({"level": "error", "error": e.kind(), "message": e.to_string()}).to_string()
}

/// Runs a parsed command and returns the process exit code.
pub fn run(cli: Cli) -> u8 {
    let log = Logger { verbose: cli.verbose };
    match execute(cli.command, log) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            1
        }
    }
}

pub fn execute(command: Command, log: Logger) -> Result<(), Error> {
    match command {
        Command::Synth(a) => synth_cmd(a, log),
        Command::Label(a) => label_cmd(a, log),
        Command::Accumulate(a) => accumulate_cmd(a, log),
        Command::Mask(a) => mask_cmd(a, log),
        Command::Extract(a) => extract_cmd(a, log),
        Command::Eval(a) => eval_cmd(a, log),
        Command::Flag(a) => flag_cmd(a, log),
        Command::Decide(a) => decide_cmd(a, log),
        Command::Merge(a) => merge_cmd(a, log),
        Command::Serve(a) => serve::serve_cmd(a, log),
    }
}

fn require_file(path: &Path) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(io_error(path, "file not found"))
    }
}

fn require_dir(path: &Path) -> Result<(), Error> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(io_error(path, "directory not found"))
    }
}

fn io_error(path: &Path, msg: &str) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(std::io::ErrorKind::NotFound, msg.to_string()),
    }
}

fn synth_cmd(a: SynthArgs, log: Logger) -> Result<(), Error> {
    let kind: ScenarioKind = a.scenario.parse()?;
    let mut spec = ScenarioSpec::new(kind);
    if let Some(r) = a.radius {
        spec.radius = r;
    }
    if let Some(l) = a.length {
        spec.length = l;
    }
    if let Some(n) = a.lanes {
        spec.lanes_per_direction = n;
    }
    if let Some(n) = a.arms {
        spec.arms = n;
    }
    if let Some(w) = a.half_width {
        spec.half_width = w;
    }
    let noise = NoiseSpec {
        point_sigma: a.noise_sigma,
        dropout_prob: a.dropout,
        spurious_rate: a.spurious_rate,
        seed: a.seed,
    };
    noise.validate()?;
    let (gt, path) = synth::generate_scenario(&spec)?;
    let frames = synth::simulate_frames(&gt, &path, &PerceptionWindow::default(), a.step, &noise)?;
    io::save_map(&a.out_gt, &gt)?;
    io::save_frames(&a.out_frames, &frames)?;
    if let Some(p) = &a.out_poses {
        let poses: Vec<_> = frames.iter().map(|f| f.pose).collect();
        io::save_poses(p, &poses)?;
    }
    log.info(
        "synth",
        &format!("{kind}: {} gt elements, {} frames", gt.elements.len(), frames.len()),
        json!({"scenario": kind.as_str(), "elements": gt.elements.len(), "frames": frames.len()}),
    );
    Ok(())
}

fn label_cmd(a: LabelArgs, log: Logger) -> Result<(), Error> {
    require_file(&a.poses)?;
    require_file(&a.cloud)?;
    let poses = io::load_poses(&a.poses)?;
    let cloud = io::load_pointcloud(&a.cloud)?;
    let mut params = LabelParams {
        lane: LaneSpec::new(a.half_width)?,
        ..LabelParams::default()
    };
    params.ground.ransac.seed = a.seed;
    let map = labeling::auto_label(&poses, &cloud, &params)?;
    io::save_map(&a.out, &map)?;
    log.info(
        "label",
        &format!("labeled {} elements from {} poses", map.elements.len(), poses.len()),
        json!({"elements": map.elements.len(), "poses": poses.len(), "cloud_points": cloud.len()}),
    );
    Ok(())
}

fn check_resolution(r: f64) -> Result<(), Error> {
    if r.is_finite() && r > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidGeometry(format!("resolution {r} must be > 0")))
    }
}

fn accumulate_cmd(a: AccumulateArgs, log: Logger) -> Result<(), Error> {
    require_file(&a.frames)?;
    check_resolution(a.resolution)?;
    let frames = io::load_frames(&a.frames)?;
    let spec = GridSpec::for_frames(&frames, a.resolution)?;
    let grid = raster::accumulate(&frames, spec)?;
    raster::save_grid(&a.out, &a.stem, &grid)?;
    log.info(
        "accumulate",
        &format!("{} frames into a {}x{} grid", frames.len(), spec.width, spec.height),
        json!({"frames": frames.len(), "width": spec.width, "height": spec.height}),
    );
    Ok(())
}

fn mask_cmd(a: MaskArgs, log: Logger) -> Result<(), Error> {
    require_dir(&a.grid)?;
    let grid = raster::load_grid(&a.grid)?;
    let mask = raster::threshold_mask(&grid, a.threshold);
    raster::save_mask(&a.out, &a.stem, &mask)?;
    let set: usize = mask.layers.iter().map(|l| l.count()).sum();
    log.info(
        "mask",
        &format!("{set} cells above threshold {}", a.threshold),
        json!({"cells": set, "threshold": a.threshold}),
    );
    Ok(())
}

fn extract_cmd(a: ExtractArgs, log: Logger) -> Result<(), Error> {
    require_dir(&a.grid)?;
    let params = ExtractParams {
        min_length: a.min_length,
        simplify_tol: a.simplify,
    };
    if !(params.min_length >= 0.0 && params.simplify_tol >= 0.0) {
        return Err(Error::InvalidGeometry("min-length and simplify must be >= 0".into()));
    }
    let grid = raster::load_grid(&a.grid)?;
    let mask = raster::threshold_mask(&grid, a.threshold);
    let map = skeleton::extract_from_mask(&mask, &params);
    io::save_map(&a.out, &map)?;
    log.info(
        "extract",
        &format!("extracted {} elements", map.elements.len()),
        json!({"elements": map.elements.len()}),
    );
    Ok(())
}

fn eval_cmd(a: EvalArgs, log: Logger) -> Result<(), Error> {
    require_file(&a.pred)?;
    require_file(&a.gt)?;
    let thresholds = ApThresholds::new(a.thresholds.clone())?;
    let params = ChamferParams::new(a.sample_step)?;
    let pred = io::load_map(&a.pred)?;
    let gt = io::load_map(&a.gt)?;
    let report = metrics::evaluate(&pred, &gt, &thresholds, &params)?;
    let mut value = serde_json::to_value(&report).expect("report serializes");
    if let Some(size) = a.per_cell {
        let cells = metrics::evaluate_per_cell(&pred, &gt, size, &thresholds, &params)?;
        let keyed: serde_json::Map<String, serde_json::Value> = cells
            .iter()
            .map(|c| (c.cell_id.clone(), serde_json::to_value(c).expect("cell serializes")))
            .collect();
        value["cell_size"] = json!(size);
        value["cells"] = serde_json::Value::Object(keyed);
    }
    let mut text = serde_json::to_string_pretty(&value).expect("json");
    text.push('\n');
    write_atomic(&a.out, text.as_bytes())?;
    log.info(
        "eval",
        &format!("mAP {:.4}", report.map_ap),
        json!({"mAP": report.map_ap}),
    );
    Ok(())
}

fn flag_cmd(a: FlagArgs, log: Logger) -> Result<(), Error> {
    require_file(&a.new)?;
    require_file(&a.map)?;
    if !(a.threshold.is_finite() && a.cell_size.is_finite() && a.cell_size > 0.0) {
        return Err(Error::InvalidGeometry("threshold and cell size must be finite, cell size > 0".into()));
    }
    let new = io::load_map(&a.new)?;
    let existing = io::load_map(&a.map)?;
    let proposal = updater::flag_cells(
        &new,
        &existing,
        &FlagParams {
            update_threshold: a.threshold,
            cell_size: a.cell_size,
        },
    )?;
    updater::save_proposal(&a.out, &proposal)?;
    log.info(
        "flag",
        &format!("{} cells flagged", proposal.cells.len()),
        json!({"flagged": proposal.cells.len(), "threshold": a.threshold}),
    );
    Ok(())
}

fn decide_cmd(a: DecideArgs, log: Logger) -> Result<(), Error> {
    require_file(&a.proposal)?;
    let decision = if a.accept { Decision::Accepted } else { Decision::Rejected };
    let mut proposal = updater::read_proposal(&a.proposal)?;
    proposal.decide(&a.cell, decision)?;
    updater::save_proposal(&a.proposal, &proposal)?;
    log.info(
        "decide",
        &format!("cell {} {}", a.cell, if a.accept { "accepted" } else { "rejected" }),
        json!({"cell_id": a.cell, "decision": decision}),
    );
    Ok(())
}

fn merge_cmd(a: MergeArgs, log: Logger) -> Result<(), Error> {
    for p in [&a.map, &a.new, &a.proposal] {
        require_file(p)?;
    }
    let existing = io::load_map(&a.map)?;
    let new = io::load_map(&a.new)?;
    let mut proposal = updater::load_proposal(&a.proposal, &existing)?;
    if a.accept_all {
        proposal.decide_all(Decision::Accepted);
    } else if a.reject_all {
        proposal.decide_all(Decision::Rejected);
    }
    let merged = updater::merge(&existing, &new, &proposal)?;
    io::save_map(&a.out, &merged.map)?;
    let accepted = proposal.cells.iter().filter(|c| c.decision == Decision::Accepted).count();
    log.info(
        "merge",
        &format!("merged {accepted} accepted cells, {} elements", merged.map.elements.len()),
        json!({"accepted": accepted, "elements": merged.map.elements.len()}),
    );
    Ok(())
}
