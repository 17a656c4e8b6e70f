//! TOML run configuration. Every field is optional; command-line flags
//! override whatever the file sets.

use std::path::{Path, PathBuf};

use ablation_lab::clustering::{
    DEFAULT_K, DEFAULT_PERPLEXITY, DEFAULT_RESTARTS, DEFAULT_SILHOUETTE_SAMPLE, DEFAULT_TSNE_ITERS, TSNE_GAME_SAMPLE,
    TSNE_POOLED_SAMPLE,
};
use ablation_lab::ingest::{DEFAULT_BLOCK_SIZE, DEFAULT_VAL_FRACTION};
use ablation_lab::nn::Topology;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathSettings,
    pub pixels_per_degree: Option<f64>,
    pub subject: Option<String>,
    pub game: Option<String>,
    pub configs: Option<String>,
    pub seed: Option<u64>,
    pub topology: Option<TopologyChoice>,
    #[serde(default)]
    pub schedule: ScheduleSettings,
    #[serde(default)]
    pub split: SplitSettings,
    #[serde(default)]
    pub analysis: AnalysisSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSettings {
    pub frames: Option<PathBuf>,
    #[serde(default)]
    pub labels: Vec<PathBuf>,
    pub store: Option<PathBuf>,
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub results: Vec<PathBuf>,
}

/// Overrides for the training schedule; unset fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSettings {
    pub quasi_epochs: Option<usize>,
    pub batches_per_epoch: Option<usize>,
    pub batch_size: Option<usize>,
    pub lr_initial: Option<f64>,
    pub lr_after_drop: Option<f64>,
    pub lr_drop_epoch: Option<usize>,
    pub weight_decay: Option<f64>,
    pub grad_clip_norm: Option<f64>,
    pub bn_refresh_batches: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSettings {
    pub block_size: usize,
    pub val_fraction: f64,
    /// Defaults to the run seed.
    pub seed: Option<u64>,
}

impl Default for SplitSettings {
    fn default() -> Self {
        Self {
            block_size: DEFAULT_BLOCK_SIZE,
            val_fraction: DEFAULT_VAL_FRACTION,
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSettings {
    pub k: usize,
    pub restarts: usize,
    pub perplexity: f64,
    pub tsne_iterations: usize,
    pub silhouette_sample: usize,
    pub tsne_pooled_sample: usize,
    pub tsne_game_sample: usize,
    pub seed: u64,
}

impl Default for AnalysisSettings {
    fn default() -> Self {
        Self {
            k: DEFAULT_K,
            restarts: DEFAULT_RESTARTS,
            perplexity: DEFAULT_PERPLEXITY,
            tsne_iterations: DEFAULT_TSNE_ITERS,
            silhouette_sample: DEFAULT_SILHOUETTE_SAMPLE,
            tsne_pooled_sample: TSNE_POOLED_SAMPLE,
            tsne_game_sample: TSNE_GAME_SAMPLE,
            seed: 0,
        }
    }
}

impl AnalysisSettings {
    pub fn validate(&self) -> CliResult<()> {
        if self.k < 2 {
            return Err(CliError::Config(format!("k must be at least 2, got {}", self.k)));
        }
        if self.restarts == 0 || self.tsne_iterations == 0 {
            return Err(CliError::Config("restarts and t-SNE iterations must be positive".into()));
        }
        if !(self.perplexity > 0.0 && self.perplexity.is_finite()) {
            return Err(CliError::Config(format!("perplexity must be positive, got {}", self.perplexity)));
        }
        if self.silhouette_sample < 2 {
            return Err(CliError::Config("silhouette sample must hold at least two points".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TopologyChoice {
    #[default]
    Compact,
    Standard,
}

impl TopologyChoice {
    pub fn topology(self) -> Topology {
        match self {
            TopologyChoice::Compact => Topology::compact(),
            TopologyChoice::Standard => Topology::standard(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))
    }

    /// Loads `path` when given, otherwise an empty configuration.
    pub fn load_optional(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }
}

/// First of `flag` and `file`, or a configuration error naming `name`.
pub(crate) fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> CliResult<T> {
    flag.or(file)
        .ok_or_else(|| CliError::Config(format!("missing required setting {name}")))
}
