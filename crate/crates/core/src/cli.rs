//! Batch command-line front end: synthesize, dead-reckon, train, evaluate
//! and compare.
//!
//! Every command writes its outputs plus a `manifest.json` into `--out`.
//! Outputs contain no timestamps, so reruns with the same inputs and seed
//! are byte-identical. The only wall-clock field is `wall_time_s` in the
//! training summary.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, GtSample, TrainingSet, TrajectoryData};
use crate::error::{Error, Result};
use crate::frames::{euler_from_dcm, EarthModel, EulerAngles, LocalChart};
use crate::mechanization::{dead_reckon, geodetic_to_local_ned, DeadReckonOptions, NavState, Scheme};
use crate::metrics::{self, Track, TrajectoryMetrics};
use crate::network::{Network, OUTPUT_DIM};
use crate::synth::{self, MotionProfile, SensorErrorModel};
use crate::trainer::{self, TrainConfig, TrainObserver, TrainState};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const STATE_FILE: &str = "train_state.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const SUMMARY_FILE: &str = "train_summary.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const ATE_FILE: &str = "ate.csv";
pub const TRACK_FILE: &str = "track.csv";
pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_TABLE: &str = "comparison.txt";
pub const TRACKS_SVG: &str = "tracks.svg";

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NUMERICAL: i32 = 4;
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => exit::IO,
        Error::Numerical(_) => exit::NUMERICAL,
        Error::Config { .. } | Error::Input(_) | Error::Parse { .. } | Error::Domain(_) => exit::CONFIG,
    }
}

#[derive(Debug, Parser)]
#[command(name = "pidr", version, about = "Physics-informed inertial dead reckoning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic IMU/GT dataset from a motion profile.
    Synth(SynthArgs),
    /// Dead-reckon an IMU stream with the strapdown equations.
    Dr(DrArgs),
    /// Train a network on one or more datasets.
    Train(TrainArgs),
    /// Evaluate a trained network on a dataset.
    Eval(EvalArgs),
    /// Combine metrics reports of several methods.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// TOML motion profile.
    #[arg(long)]
    pub profile: PathBuf,
    /// TOML sensor error model; an error-free IMU when omitted.
    #[arg(long)]
    pub errors: Option<PathBuf>,
    /// Overrides the noise seed of the error model.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DrArgs {
    /// Dataset directory holding imu.csv, gt.csv and metadata.txt.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "rk4")]
    pub scheme: Scheme,
    #[arg(long)]
    pub mode_2d: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML training configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory; repeat for several trajectories.
    #[arg(long = "data", required = true)]
    pub data: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a saved training state.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub n_collocation: Option<usize>,
    #[arg(long)]
    pub lambda_phys: Option<f64>,
    #[arg(long)]
    pub lambda_data: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub mode_2d: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// `LABEL=metrics.csv`; repeat once per method, in display order.
    #[arg(long = "report", required = true)]
    pub reports: Vec<String>,
    /// Label of the method the others are compared against; the last
    /// report when omitted.
    #[arg(long)]
    pub ours: Option<String>,
    /// `LABEL=track.csv` tracks to draw in the SVG plot.
    #[arg(long = "track")]
    pub tracks: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub inputs: Vec<String>,
    pub out_dir: String,
    pub seed: Option<u64>,
    pub version: String,
}

impl RunManifest {
    fn new(command: &str, config: Option<&Path>, inputs: &[&Path], out: &Path, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config: config.map(|p| p.display().to_string()),
            inputs: inputs.iter().map(|p| p.display().to_string()).collect(),
            out_dir: out.display().to_string(),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    fn write(&self, out: &Path) -> Result<()> {
        write_json(&out.join(MANIFEST_FILE), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Numerical(e.to_string()))?;
    text.push('\n');
    write_file(path, &text)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// TOML errors carry the offending key in their rendered form, so the full
/// message is kept.
fn parse_toml<T: serde::de::DeserializeOwned>(path: &Path, field: &str) -> Result<T> {
    toml::from_str(&read_file(path)?).map_err(|e| Error::config(field, format!("{}: {e}", path.display())))
}

/// Parses `argv` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match run(cli.command) {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Dr(a) => cmd_dr(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

pub fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let profile: MotionProfile = parse_toml(&a.profile, "profile")?;
    profile.validate()?;
    let mut errors = match &a.errors {
        Some(p) => parse_toml::<SensorErrorModel>(p, "errors")?,
        None => SensorErrorModel::none(),
    };
    if let Some(seed) = a.seed {
        errors.seed = seed;
    }
    errors.validate()?;
    synth::emit_dataset(&profile, &errors, &a.out)?;
    let mut inputs = vec![a.profile.as_path()];
    inputs.extend(a.errors.as_deref());
    RunManifest::new("synth", Some(&a.profile), &inputs, &a.out, Some(errors.seed)).write(&a.out)
}

fn write_track_outputs(out: &Path, id: &str, pred: &Track, gt: &Track) -> Result<TrajectoryMetrics> {
    let (m, series) = metrics::evaluate_tracks(id, pred, gt)?;
    write_file(&out.join(METRICS_FILE), &metrics::metrics_csv(std::slice::from_ref(&m)))?;
    write_file(&out.join(ATE_FILE), &metrics::ate_csv(&series))?;
    write_file(&out.join(TRACK_FILE), &metrics::track_csv(pred))?;
    Ok(m)
}

fn gt_track(traj: &TrajectoryData) -> Track {
    traj.gt.iter().map(|g| (g.t, g.position)).collect()
}

pub fn cmd_dr(a: &DrArgs) -> Result<()> {
    let traj = TrajectoryData::load(&a.data)?;
    let first = traj
        .aligned
        .first()
        .ok_or_else(|| Error::input("no GT row overlaps the IMU stream"))?;
    let model = EarthModel::wgs84();
    let chart = LocalChart::new(traj.origin, &model)?;
    let init = NavState {
        position: chart.to_geodetic(&first.gt.position)?,
        velocity: first.gt.velocity,
        attitude: crate::frames::dcm_from_euler(&first.gt.euler)?,
    };
    let k0 = traj.imu.partition_point(|s| s.t < first.imu.t);
    let options = DeadReckonOptions {
        scheme: a.scheme,
        mode_2d: a.mode_2d,
        model,
    };
    let solution = dead_reckon(&init, &traj.imu[k0..], &options)?;
    let local = geodetic_to_local_ned(&solution, &traj.origin, &model)?;
    let rows = local
        .points()
        .iter()
        .map(|p| {
            Ok(GtSample {
                t: p.t,
                position: p.position,
                velocity: p.velocity,
                euler: euler_from_dcm(&p.attitude)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out)?;
    dataset::write_gt_csv(&a.out.join(TRAJECTORY_FILE), &rows)?;
    let pred: Track = rows.iter().map(|r| (r.t, r.position)).collect();
    let m = write_track_outputs(&a.out, &traj.id, &pred, &gt_track(&traj))?;
    println!(
        "{}: PRMSE {:.4} m, MATE {:.4} m, TDE {:.4} %, FDE {:.4} m",
        m.trajectory, m.prmse, m.mate, m.tde, m.fde
    );
    RunManifest::new("dr", None, &[a.data.as_path()], &a.out, None).write(&a.out)
}

/// Resolves the training configuration: file, then flags.
pub fn train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => TrainConfig::from_toml(&read_file(p)?)?,
        None => TrainConfig::default(),
    };
    apply_overrides(&mut c, a);
    c.validate()?;
    Ok(c)
}

fn apply_overrides(c: &mut TrainConfig, a: &TrainArgs) {
    if let Some(v) = a.learning_rate {
        c.learning_rate = v;
    }
    if let Some(v) = a.weight_decay {
        c.weight_decay = v;
    }
    if let Some(v) = a.batch_size {
        c.batch_size = v;
    }
    if let Some(v) = a.n_collocation {
        c.n_collocation = v;
    }
    if let Some(v) = a.lambda_phys {
        c.loss.lambda_phys = v;
    }
    if let Some(v) = a.lambda_data {
        c.loss.lambda_data = v;
    }
    if let Some(v) = a.dropout {
        c.dropout = v;
    }
    if a.mode_2d {
        c.mode_2d = true;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.epochs {
        c.max_epochs = v;
    }
    if let Some(v) = a.checkpoint_every {
        c.checkpoint_every = v;
    }
}

/// Writes the model, the resumable state and the loss log.
fn save_run(out: &Path, state: &TrainState) -> Result<()> {
    state.network.save(&out.join(MODEL_FILE))?;
    state.save(&out.join(STATE_FILE))?;
    let mut log = String::from("epoch,total,data,phys,lr\n");
    for r in &state.history {
        log.push_str(&trainer::log_line(r));
    }
    write_file(&out.join(LOG_FILE), &log)
}

struct PeriodicCheckpoint<'a> {
    out: &'a Path,
    every: usize,
}

impl TrainObserver for PeriodicCheckpoint<'_> {
    fn epoch_end(&mut self, state: &TrainState) -> Result<()> {
        if self.every > 0 && state.epoch % self.every == 0 {
            save_run(self.out, state)?;
        }
        log::info!("{}", trainer::log_line(state.history.last().expect("an epoch was recorded")).trim_end());
        Ok(())
    }
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    epochs: usize,
    stop: trainer::StopReason,
    final_total: f64,
    final_data: f64,
    final_phys: f64,
    wall_time_s: f64,
}

pub fn load_training_set(dirs: &[PathBuf]) -> Result<TrainingSet> {
    let trajectories = dirs.iter().map(|d| TrajectoryData::load(d)).collect::<Result<Vec<_>>>()?;
    TrainingSet::new(trajectories)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let set = load_training_set(&a.data)?;
    let mut state = match &a.resume {
        Some(p) => {
            let mut s = TrainState::load(p)?;
            apply_overrides(&mut s.config, a);
            s.config.validate()?;
            if s.network.stats != set.stats {
                return Err(Error::config(
                    "resume",
                    "the datasets differ from the ones the saved state was trained on",
                ));
            }
            s
        }
        None => TrainState::new(&train_config(a)?, &set)?,
    };
    create_dir(&a.out)?;
    write_file(&a.out.join(CONFIG_FILE), &state.config.to_toml())?;
    let mut inputs: Vec<&Path> = a.data.iter().map(PathBuf::as_path).collect();
    inputs.extend(a.resume.as_deref());
    RunManifest::new("train", a.config.as_deref(), &inputs, &a.out, Some(state.config.seed)).write(&a.out)?;

    let mut observer = PeriodicCheckpoint {
        out: &a.out,
        every: state.config.checkpoint_every,
    };
    let report = match trainer::train_from(&mut state, &set, &mut observer) {
        Ok(r) => r,
        Err(e) => {
            // The state still holds the last completed epoch.
            if state.epoch > 0 {
                save_run(&a.out, &state)?;
            }
            return Err(e);
        }
    };
    save_run(&a.out, &state)?;
    let last = report.history.last();
    write_json(
        &a.out.join(SUMMARY_FILE),
        &TrainSummary {
            epochs: state.epoch,
            stop: report.stop,
            final_total: last.map_or(f64::NAN, |r| r.loss.total),
            final_data: last.map_or(f64::NAN, |r| r.loss.data),
            final_phys: last.map_or(f64::NAN, |r| r.loss.phys),
            wall_time_s: report.wall_time_s,
        },
    )?;
    if let Some(r) = last {
        println!(
            "epoch {}: total {:.6e} (data {:.6e}, phys {:.6e}), stop: {:?}",
            r.epoch, r.loss.total, r.loss.data, r.loss.phys, report.stop
        );
    }
    Ok(())
}

fn prediction_rows(pred: &[(f64, [f64; OUTPUT_DIM])]) -> Vec<GtSample> {
    pred.iter()
        .map(|(t, y)| GtSample {
            t: *t,
            position: Vector3::new(y[0], y[1], y[2]),
            velocity: Vector3::new(y[3], y[4], y[5]),
            euler: EulerAngles::new(y[6], y[7], y[8]),
        })
        .collect()
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let net = Network::load(&a.model, None)?;
    let traj = TrajectoryData::load(&a.data)?;
    let rows = prediction_rows(&net.predict_trajectory(&traj)?);
    create_dir(&a.out)?;
    dataset::write_gt_csv(&a.out.join(PREDICTIONS_FILE), &rows)?;
    let pred: Track = rows.iter().map(|r| (r.t, r.position)).collect();
    let m = write_track_outputs(&a.out, &traj.id, &pred, &gt_track(&traj))?;
    println!(
        "{}: PRMSE {:.4} m, MATE {:.4} m, TDE {:.4} %, FDE {:.4} m",
        m.trajectory, m.prmse, m.mate, m.tde, m.fde
    );
    RunManifest::new("eval", None, &[a.model.as_path(), a.data.as_path()], &a.out, Some(net.seed)).write(&a.out)
}

fn split_label(spec: &str) -> Result<(String, PathBuf)> {
    match spec.split_once('=') {
        Some((label, path)) if !label.is_empty() && !path.is_empty() => Ok((label.to_string(), PathBuf::from(path))),
        _ => Err(Error::config("report", format!("expected LABEL=PATH, got `{spec}`"))),
    }
}

fn read_track_csv(path: &Path) -> Result<Track> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut out = Track::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec.get(i).and_then(|s| s.trim().parse().ok()).ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line,
                reason: format!("field {} is missing or not a number", i + 1),
            })
        };
        out.push((num(0)?, Vector3::new(num(1)?, num(2)?, 0.0)));
    }
    Ok(out)
}

pub fn cmd_compare(a: &CompareArgs) -> Result<()> {
    let mut methods = Vec::new();
    let mut paths = Vec::new();
    for spec in &a.reports {
        let (label, path) = split_label(spec)?;
        if methods.iter().any(|(l, _)| *l == label) {
            return Err(Error::config("report", format!("duplicate label `{label}`")));
        }
        methods.push((label, metrics::read_metrics_csv(&path)?));
        paths.push(path);
    }
    let ours = match &a.ours {
        Some(label) => methods
            .iter()
            .position(|(l, _)| l == label)
            .ok_or_else(|| Error::config("ours", format!("no report labelled `{label}`")))?,
        None => methods.len() - 1,
    };
    let comparison = metrics::compare(&methods, ours)?;
    create_dir(&a.out)?;
    write_file(&a.out.join(COMPARISON_CSV), &comparison.to_csv())?;
    let table = comparison.to_table();
    write_file(&a.out.join(COMPARISON_TABLE), &table)?;
    print!("{table}");
    if !a.tracks.is_empty() {
        let tracks = a
            .tracks
            .iter()
            .map(|s| {
                let (label, path) = split_label(s)?;
                Ok((label, read_track_csv(&path)?))
            })
            .collect::<Result<Vec<_>>>()?;
        write_file(&a.out.join(TRACKS_SVG), &metrics::svg_tracks("Horizontal tracks (N up, E right)", &tracks))?;
    }
    let inputs: Vec<&Path> = paths.iter().map(PathBuf::as_path).collect();
    RunManifest::new("compare", None, &inputs, &a.out, None).write(&a.out)
}
