//! The `automr` command line: prepare, train, evaluate, tune, export, report and synth.

mod commands;
pub mod config;
pub mod manifest;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use automr_core::data::DataError;
use automr_core::model::ModelError;
use automr_core::train::{CheckpointError, TrainError};
use automr_core::tune::TuneError;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Missing or contradictory flags.
    #[error("{0}")]
    Usage(String),
    /// Inputs that parsed but failed validation: schemas, configs, data files.
    #[error("{0}")]
    Invalid(String),
    /// Failures while running: I/O, divergence.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Invalid(_) => EXIT_INVALID,
            Self::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Runtime(format!("{}: {e}", path.display()))
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Tensor(_) => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Tensor(_) => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => Self::Runtime(e.to_string()),
            _ => Self::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Config(_) | TrainError::EmptySplit(_) | TrainError::Incompatible { .. } => {
                Self::Invalid(e.to_string())
            }
            TrainError::Anomaly { .. } | TrainError::Tensor(_) => Self::Runtime(e.to_string()),
        }
    }
}

impl From<TuneError> for CliError {
    fn from(e: TuneError) -> Self {
        match e {
            TuneError::Data(d) => d.into(),
            TuneError::Io { .. } | TuneError::NoSuccessfulTrials => Self::Runtime(e.to_string()),
            TuneError::Space(_) | TuneError::Options(_) | TuneError::CorruptStore { .. } => {
                Self::Invalid(e.to_string())
            }
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "automr",
    version,
    about = "Sensor-window classification with separable 1D CNNs and model-based tuning",
    propagate_version = true
)]
pub struct Cli {
    /// Only log warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest CSV recordings into a windowed dataset container (.awd).
    Prepare(PrepareArgs),
    /// Train a model and write checkpoints, event log and final metrics.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Run a hyperparameter study (or the manual batch-size grid).
    Tune(TuneArgs),
    /// Write the best trial of a study as a train config.
    Export(ExportArgs),
    /// Render tables and plots for one or more training runs.
    Report(ReportArgs),
    /// Generate the synthetic sinusoid corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// Dataset schema, or a dataset bundle with a `schema` field.
    #[arg(long)]
    pub schema: PathBuf,
    /// Directory of CSV recordings.
    #[arg(long)]
    pub input: PathBuf,
    /// Output container.
    #[arg(long)]
    pub output: PathBuf,
    /// Split and augmentation seed.
    #[arg(long, env = "AUTOMR_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Prepared dataset. Optional when the config names one.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Preset name (base, large) or a model config JSON file.
    #[arg(long)]
    pub model: Option<String>,
    /// Run config (as written by `export`) or dataset bundle.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, env = "AUTOMR_SEED")]
    pub seed: Option<u64>,
    /// Run directory. Defaults to runs/<timestamp>.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from `<out>/last.amck`.
    #[arg(long, requires = "out")]
    pub resume: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = SplitArg::Both)]
    pub split: SplitArg,
    /// Also write the metrics as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GridDim {
    #[value(name = "batch_size")]
    BatchSize,
}

#[derive(Debug, Args)]
pub struct TuneArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 12)]
    pub trials: usize,
    #[arg(long, default_value_t = 15)]
    pub epochs_per_trial: usize,
    #[arg(long, env = "AUTOMR_SEED")]
    pub seed: Option<u64>,
    /// Append-only trial store; an existing store is resumed.
    #[arg(long, default_value = "study.ndjson")]
    pub store: PathBuf,
    /// Search space JSON; defaults to the standard eight-dimension space.
    #[arg(long)]
    pub space: Option<PathBuf>,
    /// Base model: preset name or model config file.
    #[arg(long, default_value = "base")]
    pub model: String,
    /// Base run config whose training settings the trials override.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Discard an existing store instead of resuming it.
    #[arg(long)]
    pub fresh: bool,
    /// Run the manual grid over this dimension instead of the model-based search.
    #[arg(long, value_enum)]
    pub manual_grid: Option<GridDim>,
    #[arg(long, value_delimiter = ',', default_values_t = [32usize, 64, 128, 256])]
    pub batch_sizes: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    pub validation_fraction: f64,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value = "best.json")]
    pub out: PathBuf,
    /// Dataset to record in the exported config.
    #[arg(long)]
    pub data: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directory; repeat to compare runs.
    #[arg(long = "run", required = true)]
    pub runs: Vec<PathBuf>,
    /// Display name per run, in the same order as --run.
    #[arg(long = "name")]
    pub names: Vec<String>,
    /// Output directory. Defaults to <run>/report for one run, ./report otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub recordings_per_class: usize,
    /// Samples per recording.
    #[arg(long, default_value_t = 1024)]
    pub length: usize,
    #[arg(long, default_value_t = 128)]
    pub window: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
    #[arg(long, env = "AUTOMR_SEED")]
    pub seed: Option<u64>,
}

fn init_logging(quiet: bool) {
    let level = if quiet { "warn" } else { "info" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .format_target(false)
        .try_init();
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    init_logging(cli.quiet);
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match commands::dispatch(cli.command, &argv) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Usage(_) = e {
                eprintln!("\nFor more information, try '--help'.");
            }
            e.exit_code()
        }
    }
}
