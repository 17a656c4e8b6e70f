//! Command implementations behind the `ablation-lab` binary.
//!
//! Each subcommand is a plain function taking its parsed arguments, so tests
//! and scripts can drive the pipeline without spawning processes.

pub mod analyze;
pub mod config;
mod error;
pub mod ingest;
pub mod output;
pub mod run;
pub mod synth;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, TopologyChoice};
pub use error::{CliError, CliResult, ErrorReport, EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION};

/// Environment variable that caps the worker thread count.
pub const THREADS_ENV: &str = "ABLATION_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ablation-lab", version, about = "Information-source ablation for gaze-conditioned action prediction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a replay store from frame images and label files.
    Ingest(IngestArgs),
    /// Train and evaluate model configurations on one store.
    Run(RunArgs),
    /// Aggregate run results into drop matrices, rules and clusters.
    Analyze(AnalyzeArgs),
    /// Write a scripted recording with known information dependence.
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Ingest(_) => "ingest",
            Command::Run(_) => "run",
            Command::Analyze(_) => "analyze",
            Command::Synth(_) => "synth",
        }
    }

    /// Runs the command and returns its summary for standard output.
    pub fn execute(&self) -> CliResult<serde_json::Value> {
        let summary = match self {
            Command::Ingest(a) => serde_json::to_value(ingest::ingest(a)?),
            Command::Run(a) => serde_json::to_value(run::run(a)?),
            Command::Analyze(a) => serde_json::to_value(analyze::analyze(a)?),
            Command::Synth(a) => serde_json::to_value(synth::synth(a)?),
        };
        Ok(summary.map_err(ablation_lab::Error::from)?)
    }
}

#[derive(Debug, Clone, Default, Args)]
pub struct IngestArgs {
    /// Directory of frame images named `<frame_id>.png`.
    #[arg(long)]
    pub frames: Option<PathBuf>,
    /// Label files, one session each.
    #[arg(long, num_args = 1..)]
    pub labels: Vec<PathBuf>,
    /// Store directory to create.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Keep only sessions of this subject.
    #[arg(long)]
    pub subject: Option<String>,
    /// Game identifier; defaults to the first label file's stem.
    #[arg(long)]
    pub game: Option<String>,
    /// Eye-tracker pixels per visual degree in source coordinates.
    #[arg(long)]
    pub ppd: Option<f64>,
    /// Also precompute and store the gaze maps.
    #[arg(long)]
    pub gaze_cache: bool,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replace earlier outputs in a non-empty directory.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// Comma-separated configuration letters, e.g. `A,C,F`.
    #[arg(long)]
    pub configs: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Quasi-epochs to train.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Batches per quasi-epoch.
    #[arg(long)]
    pub batches: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, value_enum)]
    pub topology: Option<TopologyChoice>,
    /// Override the store's pixels per degree.
    #[arg(long)]
    pub ppd: Option<f64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Do not report per-epoch progress on standard error.
    #[arg(long)]
    pub quiet: bool,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Default, Args)]
pub struct AnalyzeArgs {
    /// Output directories of earlier `run` invocations.
    #[arg(long, num_args = 1..)]
    pub results: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Number of clusters.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub perplexity: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub silhouette_sample: Option<usize>,
    #[arg(long)]
    pub tsne_sample: Option<usize>,
    #[arg(long)]
    pub tsne_game_sample: Option<usize>,
    #[arg(long)]
    pub tsne_iterations: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// One of FOCUS, PERIPHERY, MEMORY, GAZE_LOC, NOISE.
    #[arg(long)]
    pub kind: String,
    /// Frames per episode.
    #[arg(long)]
    pub length: usize,
    #[arg(long, default_value_t = 1)]
    pub episodes: usize,
    /// Number of distinct actions used.
    #[arg(long, default_value_t = ablation_lab::synth::DEFAULT_ARITY)]
    pub arity: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Reads the thread cap from [`THREADS_ENV`], if set.
pub fn threads_from_env() -> CliResult<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}
