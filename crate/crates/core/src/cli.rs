//! The `fishtrack` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::Config;
use crate::error::Error;
use crate::eval::{self, EvalConfig, MappingMode};
use crate::frames::{self, FrameSource, ImageFormat};
use crate::records;
use crate::simulator;
use crate::stats::{self, HeadingMode, TrackPoint};
use crate::tracker::{self, FrameOutput, Pin, Seeding, Tracker};

#[derive(Debug, Parser)]
#[command(
    name = "fishtrack",
    version,
    about = "Track swimming fish in binary mask sequences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Track every target through a mask sequence.
    Track(TrackArgs),
    /// Generate a synthetic school with ground truth.
    Simulate(SimulateArgs),
    /// Estimate motion parameters from a trajectory or ground-truth CSV.
    Stats(StatsArgs),
    /// Score a trajectory against ground truth.
    Eval(EvalArgs),
    /// Re-run tracking with manual corrections pinned.
    Correct(CorrectArgs),
    /// Print the default configuration.
    Config(ConfigArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Configuration file; defaults apply when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for per-target work (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
}

impl Common {
    fn load(&self) -> anyhow::Result<Config> {
        let cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        Ok(match self.seed {
            Some(s) => cfg.with_seed(s),
            None => cfg,
        })
    }
}

#[derive(Debug, Args)]
pub struct TrackInput {
    /// Directory of frame_NNNNNN.pgm/png files or an FMSK file.
    #[arg(long)]
    pub frames: PathBuf,
    /// One target per blob of the first frame (the default).
    #[arg(long, conflicts_with = "seeds")]
    pub seed_blobs: bool,
    /// CSV of target_id,x,y starting positions.
    #[arg(long)]
    pub seeds: Option<PathBuf>,
}

impl TrackInput {
    fn seeding(&self) -> anyhow::Result<Seeding> {
        Ok(match &self.seeds {
            Some(p) => Seeding::Positions(records::load(p, records::read_seeds)?),
            None => Seeding::Blobs(None),
        })
    }
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    #[command(flatten)]
    pub input: TrackInput,
    #[command(flatten)]
    pub common: Common,
    /// Output directory for trajectories.csv, events.csv and errors.csv.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MaskFormat {
    Pgm,
    Png,
    Fmsk,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory; masks go to `frames/` (or `masks.fmsk`).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "pgm")]
    pub format: MaskFormat,
    #[arg(long)]
    pub n_fish: Option<usize>,
    #[arg(long)]
    pub n_frames: Option<u64>,
    #[arg(long)]
    pub crossing_bias: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum HeadingArg {
    Displacement,
    Axis,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// trajectories.csv or ground_truth.csv.
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Output directory for params.toml and the histogram CSVs.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "displacement")]
    pub heading: HeadingArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MappingArg {
    Global,
    FirstFrame,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub trajectory: PathBuf,
    #[arg(long)]
    pub ground_truth: PathBuf,
    /// events.csv; defaults to the one next to the trajectory if present.
    #[arg(long)]
    pub events: Option<PathBuf>,
    /// errors.csv; defaults to the one next to the trajectory if present.
    #[arg(long)]
    pub errors: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "global")]
    pub mapping: MappingArg,
    #[arg(long, default_value_t = 15.0)]
    pub match_radius: f64,
    /// Directory for eval.txt.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a corrections file pinning every off-track stretch back onto
    /// the fish the target started on.
    #[arg(long)]
    pub suggest_corrections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CorrectArgs {
    #[command(flatten)]
    pub input: TrackInput,
    #[command(flatten)]
    pub common: Common,
    /// errors.csv of the run being corrected.
    #[arg(long)]
    pub errors: Option<PathBuf>,
    /// CSV of frame,target_id,blob_id,x,y overrides.
    #[arg(long)]
    pub corrections: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Write to this file instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` and runs the command. Returns the process exit code: 0 on
/// success, 2 for bad input, 1 for anything else.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

fn exit_code(e: &anyhow::Error) -> i32 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Contract(_) => 1,
                _ => 2,
            };
        }
        if cause.is::<std::io::Error>() {
            return 2;
        }
    }
    1
}

pub fn execute(cmd: &Command) -> anyhow::Result<()> {
    match cmd {
        Command::Track(a) => cmd_track(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Stats(a) => cmd_stats(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Correct(a) => cmd_correct(a),
        Command::Config(a) => cmd_config(a),
    }
}

fn out_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(())
}

fn run_tracker(
    input: &TrackInput,
    common: &Common,
    pins: &[Pin],
) -> anyhow::Result<Vec<FrameOutput>> {
    let cfg = common.load()?;
    let source = FrameSource::open(&input.frames)?;
    let seeding = input.seeding()?;
    let threads = common.threads;
    if threads == Some(0) {
        bail!(Error::InvalidArgument(
            "--threads must be at least 1".into()
        ));
    }
    let outputs =
        tracker::track_sequence(cfg.tracker(), source.frames()?, &seeding, pins, threads)?;
    Ok(outputs)
}

fn write_outputs(dir: &Path, outputs: &[FrameOutput]) -> anyhow::Result<()> {
    out_dir(dir)?;
    let rows: Vec<_> = outputs
        .iter()
        .flat_map(|o| o.rows.iter().cloned())
        .collect();
    let events: Vec<_> = outputs
        .iter()
        .flat_map(|o| o.events.iter().cloned())
        .collect();
    let errors: Vec<_> = outputs
        .iter()
        .flat_map(|o| o.errors.iter().cloned())
        .collect();
    records::save(
        &dir.join("trajectories.csv"),
        &rows[..],
        records::write_trajectories,
    )?;
    records::save(&dir.join("events.csv"), &events[..], records::write_events)?;
    records::save(&dir.join("errors.csv"), &errors[..], records::write_errors)?;
    eprintln!(
        "{} frames, {} targets, {} linking events, {} error records -> {}",
        outputs.len(),
        outputs.first().map_or(0, |o| o.rows.len()),
        events.len(),
        errors.len(),
        dir.display()
    );
    Ok(())
}

pub fn cmd_track(a: &TrackArgs) -> anyhow::Result<()> {
    let outputs = run_tracker(&a.input, &a.common, &[])?;
    write_outputs(&a.out, &outputs)
}

pub fn cmd_simulate(a: &SimulateArgs) -> anyhow::Result<()> {
    let cfg = a.common.load()?;
    let mut sim = cfg.simulation();
    if let Some(n) = a.n_fish {
        sim.n_fish = n;
    }
    if let Some(n) = a.n_frames {
        sim.n_frames = n;
    }
    if let Some(b) = a.crossing_bias {
        sim.crossing_bias = b;
    }
    let (masks, gt) = simulator::simulate(sim)?;
    out_dir(&a.out)?;
    let (path, fmt) = match a.format {
        MaskFormat::Fmsk => (a.out.join("masks.fmsk"), None),
        MaskFormat::Pgm => (a.out.join("frames"), Some(ImageFormat::Pgm)),
        MaskFormat::Png => (a.out.join("frames"), Some(ImageFormat::Png)),
    };
    if sim.render {
        frames::save_masks(&path, &masks, fmt)?;
    }
    records::save(
        &a.out.join("ground_truth.csv"),
        &gt,
        records::write_ground_truth,
    )?;
    let merged = gt.rows.iter().filter(|r| !r.merged_with.is_empty()).count();
    eprintln!(
        "{} frames of {} fish, {merged} merged fish-frames -> {}",
        sim.n_frames,
        sim.n_fish,
        a.out.display()
    );
    Ok(())
}

/// Position tracks per id from a trajectory or ground-truth file.
fn read_tracks(path: &Path) -> anyhow::Result<Vec<(usize, Vec<TrackPoint>)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path.display().to_string();
    let mut by_id: std::collections::BTreeMap<usize, Vec<TrackPoint>> = Default::default();
    if text.starts_with("frame,fish_id") {
        for r in records::read_ground_truth(text.as_bytes(), &name)?.rows {
            by_id.entry(r.fish_id).or_default().push(TrackPoint {
                x: r.x,
                y: r.y,
                delta: r.heading.rem_euclid(180.0),
            });
        }
    } else {
        for r in records::read_trajectories(text.as_bytes(), &name)? {
            by_id.entry(r.target_id).or_default().push(TrackPoint {
                x: r.x,
                y: r.y,
                delta: r.delta,
            });
        }
    }
    Ok(by_id.into_iter().collect())
}

pub fn cmd_stats(a: &StatsArgs) -> anyhow::Result<()> {
    let mode = match a.heading {
        HeadingArg::Displacement => HeadingMode::Displacement,
        HeadingArg::Axis => HeadingMode::Axis,
    };
    let (mut dist, mut turns) = (Vec::new(), Vec::new());
    for (id, pts) in read_tracks(&a.trajectory)? {
        let (d, t) = stats::trajectory_deltas(&pts, mode).with_context(|| format!("track {id}"))?;
        dist.extend(d);
        turns.extend(t);
    }
    let est = stats::estimate_motion(&dist, &turns)?;
    let p = &est.params;
    let text = format!(
        "[motion]\nsigma_v = {:.4}\nsigma_theta1 = {:.4}\nsigma_theta2 = {:.4}\nmix_weight1 = {:.4}\nattenuation_d = {:.4}\n\n\
         [fit]\nsteps = {}\nturns = {}\nturns_used = {}\ndistance_mean = {:.4}\ndistance_degenerate = {}\n\
         em_iterations = {}\nem_converged = {}\nmean_log_likelihood = {:.6}\nwithin_15 = {:.4}\n",
        p.sigma_v,
        p.sigma_theta1,
        p.sigma_theta2,
        p.mix_weight1,
        p.attenuation_d,
        dist.len(),
        turns.len(),
        est.turns_used,
        est.distance_fit.mean,
        est.distance_fit.degenerate,
        est.turn_fit.iterations,
        est.turn_fit.converged,
        est.turn_fit.log_likelihood,
        est.within_15,
    );
    out_dir(&a.out)?;
    let params = a.out.join("params.toml");
    std::fs::write(&params, &text).map_err(|e| Error::io(&params, e))?;
    records::save(
        &a.out.join("distance_histogram.csv"),
        &est.distance_histogram,
        records::write_histogram,
    )?;
    records::save(
        &a.out.join("turn_histogram.csv"),
        &est.turn_histogram,
        records::write_histogram,
    )?;
    print!("{text}");
    Ok(())
}

fn sibling(explicit: &Option<PathBuf>, trajectory: &Path, name: &str) -> Option<PathBuf> {
    explicit.clone().or_else(|| {
        let p = trajectory.parent()?.join(name);
        p.is_file().then_some(p)
    })
}

pub fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let traj = records::load(&a.trajectory, records::read_trajectories)?;
    let gt = records::load(&a.ground_truth, records::read_ground_truth)?;
    let cfg = EvalConfig {
        match_radius: a.match_radius,
        mode: match a.mapping {
            MappingArg::Global => MappingMode::Global,
            MappingArg::FirstFrame => MappingMode::FirstFrame,
        },
        ..EvalConfig::default()
    };
    let report = eval::evaluate(&traj, &gt, &cfg)?;
    let mut text = report.to_text();
    let events = match sibling(&a.events, &a.trajectory, "events.csv") {
        Some(p) => Some(records::load(&p, records::read_events)?),
        None => None,
    };
    let errors = match sibling(&a.errors, &a.trajectory, "errors.csv") {
        Some(p) => Some(records::load(&p, records::read_errors)?),
        None => None,
    };
    if events.is_some() || errors.is_some() {
        let unlogged = eval::unlogged_swaps(
            &report.swaps,
            events.as_deref().unwrap_or(&[]),
            errors.as_deref().unwrap_or(&[]),
            cfg.swap_window,
        );
        text += &format!("unlogged_swaps = {}\n", unlogged.len());
    }
    print!("{text}");
    for s in &report.swaps {
        eprintln!(
            "swap: target {} fish {} -> {} between frames {} and {}",
            s.target_id, s.from_fish, s.to_fish, s.since, s.frame
        );
    }
    if let Some(dir) = &a.out {
        out_dir(dir)?;
        let p = dir.join("eval.txt");
        std::fs::write(&p, &text).map_err(|e| Error::io(&p, e))?;
    }
    if let Some(p) = &a.suggest_corrections {
        // Targets go back to the fish they started on.
        let by_start = eval::evaluate(
            &traj,
            &gt,
            &EvalConfig {
                mode: MappingMode::FirstFrame,
                ..cfg
            },
        )?;
        let pins = eval::corrections(&traj, &gt, &by_start, cfg.match_radius)?;
        records::save(p, &pins[..], records::write_corrections)?;
        eprintln!("{} corrections -> {}", pins.len(), p.display());
    }
    Ok(())
}

/// Checks corrections against the frame range and the targets the run
/// starts with; every bad row is listed.
pub fn validate_corrections(
    rows: &[(u64, Pin)],
    first_frame: u64,
    n_frames: u64,
    targets: &[usize],
    path: &str,
) -> crate::Result<()> {
    let mut bad = Vec::new();
    for (line, p) in rows {
        if p.frame < first_frame || p.frame >= first_frame + n_frames {
            bad.push(format!(
                "line {line}: frame {} outside {}..{}",
                p.frame,
                first_frame,
                first_frame + n_frames
            ));
        } else if !targets.contains(&p.target_id) {
            bad.push(format!("line {line}: no target {}", p.target_id));
        }
    }
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::Record {
            path: path.into(),
            reason: bad.join("; "),
        })
    }
}

pub fn cmd_correct(a: &CorrectArgs) -> anyhow::Result<()> {
    if let Some(p) = &a.errors {
        let errs = records::load(p, records::read_errors)?;
        eprintln!("{} error records in {}", errs.len(), p.display());
    }
    let rows = records::load(&a.corrections, records::read_corrections)?;
    let cfg = a.common.load()?;
    let source = FrameSource::open(&a.input.frames)?;
    let n_frames = source.len()?;
    let first = source
        .frames()?
        .next()
        .ok_or_else(|| Error::InvalidArgument("no frames".into()))??;
    let (probe, _) = Tracker::start(cfg.tracker(), &first, &a.input.seeding()?)?;
    validate_corrections(
        &rows,
        first.frame_index,
        n_frames,
        &probe.target_ids(),
        &a.corrections.display().to_string(),
    )?;
    let pins: Vec<Pin> = rows.into_iter().map(|r| r.1).collect();
    let outputs = run_tracker(&a.input, &a.common, &pins)?;
    write_outputs(&a.out, &outputs)
}

pub fn cmd_config(a: &ConfigArgs) -> anyhow::Result<()> {
    let text = Config::default_text();
    match &a.out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::io(p, e))?,
        None => print!("{text}"),
    }
    Ok(())
}
