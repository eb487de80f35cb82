use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use dero::filter::{Integration, Mode, TiltSource};
use dero::sim::TrajectoryKind;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "dero", version, about = "Radar-inertial dead-reckoning odometry")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Sim(SimArgs),
    /// Run the estimator on a dataset.
    Run(RunArgs),
    /// Score an estimated trajectory against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NoisePreset {
    /// Perfect sensors.
    None,
    /// Office-grade MEMS gyro with realistic radar noise and outliers.
    Office,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InitKind {
    /// Coarse alignment over the stationary lead-in.
    Align,
    /// First ground-truth pose and the recorded accelerometer bias.
    Truth,
}

#[derive(Debug, clap::Args)]
pub struct SimArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON simulation config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// circle, figure8, waypoint-spline or stationary.
    #[arg(long, value_parser = parse_kind)]
    pub profile: Option<TrajectoryKind>,
    /// Total duration, s.
    #[arg(long)]
    pub duration: Option<f64>,
    /// Cruise speed, m/s.
    #[arg(long)]
    pub speed: Option<f64>,
    /// Trajectory size, m.
    #[arg(long)]
    pub size: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// True radar scale factor, `x,y,z`.
    #[arg(long, value_parser = parse_vec3)]
    pub scale: Option<[f64; 3]>,
    #[arg(long, value_enum)]
    pub noise: Option<NoisePreset>,
    /// Per-target Doppler noise, m/s.
    #[arg(long)]
    pub sigma_doppler: Option<f64>,
    /// Fraction of targets replaced by moving clutter.
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    /// Yaw oscillation amplitude while moving, deg.
    #[arg(long)]
    pub yaw_sway: Option<f64>,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Dataset directory containing manifest.json.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for trajectory.csv and diagnostics.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON filter config; flags below override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// full, no-scale, no-tilt, no-icp or dr-only.
    #[arg(long, value_parser = parse_mode)]
    pub mode: Option<Mode>,
    /// Scans between scan-matching updates.
    #[arg(long, short = 'M')]
    pub window: Option<usize>,
    /// RANSAC seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value = "align")]
    pub init: InitKind,
    /// Accelerometer input of the tilt update: nearest or interval-mean.
    #[arg(long, value_parser = parse_tilt_source)]
    pub tilt_source: Option<TiltSource>,
    /// Position integration: zoh or trapezoidal.
    #[arg(long, value_parser = parse_integration)]
    pub integration: Option<Integration>,
}

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    /// Estimated trajectory CSV.
    #[arg(long)]
    pub est: PathBuf,
    /// Ground truth: a pose CSV or a dataset directory.
    #[arg(long)]
    pub gt: PathBuf,
    /// Output directory for metrics.json and rel_errors.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// Relative-error segment lengths, m.
    #[arg(long, value_delimiter = ',', default_values_t = dero::eval::DEFAULT_DISTANCES)]
    pub distances: Vec<f64>,
}

fn parse_kind(s: &str) -> Result<TrajectoryKind, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn parse_tilt_source(s: &str) -> Result<TiltSource, String> {
    match s {
        "nearest" => Ok(TiltSource::Nearest),
        "interval-mean" => Ok(TiltSource::IntervalMean),
        other => Err(format!("unknown tilt source '{other}' (expected nearest, interval-mean)")),
    }
}

fn parse_integration(s: &str) -> Result<Integration, String> {
    match s {
        "zoh" | "zero-order-hold" => Ok(Integration::ZeroOrderHold),
        "trapezoidal" => Ok(Integration::Trapezoidal),
        other => Err(format!("unknown integration '{other}' (expected zoh, trapezoidal)")),
    }
}

fn parse_vec3(s: &str) -> Result<[f64; 3], String> {
    let parts = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("'{p}': {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    parts
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected 3 comma-separated values, got {}", v.len()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DERO_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Sim(args) => commands::sim(&args),
        Command::Run(args) => commands::run(&args),
        Command::Eval(args) => commands::eval(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
