//! Command-line front end: simulation, calibration, pose solving and
//! evaluation over the JSON file formats of `rigpose::io`.
//!
//! Exit codes: 0 on success, 1 on a domain error (with a JSON error record on
//! stderr), 2 on a usage error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rigpose::evaluation::{ConfigurationMask, EvaluationError};
use rigpose::extrinsic::ExtrinsicError;
use rigpose::gpnp::{Backend, GpnpError};
use rigpose::intrinsic::IntrinsicError;
use rigpose::io::IoError;
use rigpose::simulator::SimulationError;
use serde_json::json;
use thiserror::Error;

mod commands;

#[derive(Debug, Parser)]
#[command(name = "rigpose", version, about = "Multi-camera rig calibration and pose estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic datasets with ground truth.
    Simulate {
        #[command(subcommand)]
        kind: SimulateCommand,
    },
    /// Calibrate one camera's focal length, principal point and distortion.
    CalibrateIntrinsics(CalibrateIntrinsicsArgs),
    /// Calibrate camera-to-reference transforms from rotation sessions.
    CalibrateExtrinsics(CalibrateExtrinsicsArgs),
    /// Estimate the rig pose of every frame.
    SolvePose(SolvePoseArgs),
    /// Score a pose file against reference poses.
    Evaluate(EvaluateArgs),
    /// Solve and score every frame once per camera configuration.
    AblateCameras(AblateArgs),
}

#[derive(Debug, Subcommand)]
pub enum SimulateCommand {
    /// Hovering flights over a marker field.
    Flight(SimulateFlightArgs),
    /// Calibration images of a single camera.
    Intrinsics(SimulateIntrinsicsArgs),
    /// Rotation sessions of the whole rig.
    Extrinsics(SimulateExtrinsicsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Calibrated per-camera intrinsics and measured baselines.
    Dmais,
    /// Nominal focal length and centred principal points.
    Nominal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Grid,
    PerCamera,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendArg {
    ActionMatrix,
    Sampling,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::ActionMatrix => Backend::ActionMatrix,
            BackendArg::Sampling => Backend::Sampling,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// Seed of every random choice; echoed into the outputs.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct SimulateFlightArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Dmais)]
    pub preset: Preset,
    #[arg(long, default_value_t = 10)]
    pub trials: usize,
    /// Pixel noise standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = Layout::Grid)]
    pub layout: Layout,
    /// Grid spacing in meters.
    #[arg(long, default_value_t = 12.0)]
    pub spacing: f64,
    /// Markers per camera for the per-camera layout.
    #[arg(long, default_value_t = 4)]
    pub count: usize,
    /// Marker heights are uniform in `[0, relief]` meters.
    #[arg(long, default_value_t = 1.0)]
    pub relief: f64,
    #[arg(long, default_value_t = 350.0)]
    pub altitude: f64,
}

#[derive(Debug, Args)]
pub struct SimulateIntrinsicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Dmais)]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub camera: usize,
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    #[arg(long, default_value_t = 30)]
    pub points: usize,
    /// Held-out images written to `evaluation.json`.
    #[arg(long, default_value_t = 5)]
    pub eval_images: usize,
    #[arg(long, default_value_t = 0.2)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct SimulateExtrinsicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Dmais)]
    pub preset: Preset,
    #[arg(long, default_value_t = 5)]
    pub sessions: usize,
    /// Largest random disturbance of each station, degrees.
    #[arg(long, default_value_t = 0.5)]
    pub perturbation: f64,
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
}

#[derive(Debug, Args)]
pub struct CalibrateIntrinsicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    /// Held-out correspondences scored with the calibrated intrinsics.
    #[arg(long)]
    pub eval_obs: Option<PathBuf>,
    /// Use only the images of this camera; otherwise all images must share one.
    #[arg(long)]
    pub camera: Option<usize>,
    #[arg(long, default_value_t = 4096)]
    pub width: u32,
    #[arg(long, default_value_t = 3000)]
    pub height: u32,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateExtrinsicsArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    /// Rig file supplying the intrinsics and the reference camera; its
    /// extrinsics are ignored.
    #[arg(long)]
    pub rig: PathBuf,
    /// Ignore the position priors of the images.
    #[arg(long)]
    pub no_prior: bool,
    /// Standard deviation of the position priors, meters.
    #[arg(long, default_value_t = 0.1)]
    pub prior_sigma: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long, value_enum, default_value_t = BackendArg::ActionMatrix)]
    pub backend: BackendArg,
    /// Skip the final least-squares polish.
    #[arg(long)]
    pub no_refine: bool,
    /// Record solver runtimes; frames are then solved one at a time.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Debug, Args)]
pub struct SolvePoseArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    /// Active cameras, e.g. `012`; all cameras by default.
    #[arg(long)]
    pub mask: Option<ConfigurationMask>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub poses: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Cameras the poses were solved with; all cameras by default.
    #[arg(long)]
    pub mask: Option<ConfigurationMask>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub solve: SolveArgs,
    #[arg(long)]
    pub rig: PathBuf,
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub obs: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    /// Camera configurations to compare (repeatable); defaults to
    /// `0 01 012 1234 01234`.
    #[arg(long = "mask", num_args = 1..)]
    pub masks: Vec<ConfigurationMask>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
    #[error(transparent)]
    Simulation(#[from] SimulationError),
    #[error(transparent)]
    Intrinsic(#[from] IntrinsicError),
    #[error(transparent)]
    Extrinsic(#[from] ExtrinsicError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
    #[error("frame {frame}: {source}")]
    Pose { frame: usize, source: GpnpError },
}

impl CliError {
    fn invalid(path: &std::path::Path, message: impl Into<String>) -> Self {
        Self::Invalid { path: path.display().to_string(), message: message.into() }
    }

    /// Machine-readable description written to stderr.
    pub fn record(&self) -> serde_json::Value {
        let kind = match self {
            Self::Io(IoError::Io { .. }) => "io",
            Self::Io(IoError::Parse { .. }) => "parse",
            Self::Io(IoError::SchemaVersion { .. }) => "schema_version",
            Self::Io(IoError::Invalid { .. }) | Self::Invalid { .. } => "invalid_input",
            Self::Simulation(_) => "simulation",
            Self::Intrinsic(_) => "intrinsic_calibration",
            Self::Extrinsic(_) => "extrinsic_calibration",
            Self::Evaluation(_) => "evaluation",
            Self::Pose { .. } => "pose",
        };
        let mut error = json!({ "kind": kind, "message": self.to_string() });
        match self {
            Self::Io(IoError::Parse { path, line, column, .. }) => {
                error["path"] = json!(path);
                error["line"] = json!(line);
                error["column"] = json!(column);
            }
            Self::Io(IoError::Io { path, .. } | IoError::SchemaVersion { path, .. } | IoError::Invalid { path, .. })
            | Self::Invalid { path, .. } => error["path"] = json!(path),
            Self::Pose { frame, .. } => error["frame"] = json!(frame),
            _ => {}
        }
        json!({ "error": error })
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
        }
    };
    match commands::execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", e.record());
            1
        }
    }
}
