use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variant names double as the machine-readable `kind` emitted by the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed label line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("unknown action token {0:?}")]
    UnknownAction(String),
    #[error("missing frame image for frame id {0:?}")]
    MissingFrame(String),
    #[error("store is empty: {0}")]
    EmptyStore(String),
    #[error("invalid store: {0}")]
    InvalidStore(String),
    #[error("pixels-per-degree must be positive, got {0}")]
    NonPositivePpd(f64),
    #[error("gaussian sigma must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("focus radius must be positive, got {0}")]
    NonPositiveRadius(f64),
    #[error("state {index} has no valid temporal window: {reason}")]
    InvalidWindow { index: usize, reason: String },
    #[error("no valid states: {0}")]
    NoValidStates(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: usize, detail: String },
    #[error("every game was excluded for drop-matrix entry ({row},{col})")]
    DegenerateDenominator { row: char, col: char },
    #[error("missing trained model for configuration {0}")]
    MissingModel(char),
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("silhouette needs at least two clusters in the sample")]
    SingleCluster,
    #[error("perplexity {perplexity} too large for {points} points")]
    PerplexityTooLarge { perplexity: f64, points: usize },
    #[error("invalid action arity {0}")]
    InvalidArity(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checksum mismatch in {0}")]
    ChecksumMismatch(String),
    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image error for {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable variant name, used as the `kind` field of CLI error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::MalformedLine { .. } => "MalformedLine",
            Error::UnknownAction(_) => "UnknownAction",
            Error::MissingFrame(_) => "MissingFrame",
            Error::EmptyStore(_) => "EmptyStore",
            Error::InvalidStore(_) => "InvalidStore",
            Error::NonPositivePpd(_) => "NonPositivePPD",
            Error::NonPositiveSigma(_) => "NonPositiveSigma",
            Error::NonPositiveRadius(_) => "NonPositiveRadius",
            Error::InvalidWindow { .. } => "InvalidWindow",
            Error::NoValidStates(_) => "NoValidStates",
            Error::ShapeMismatch(_) => "ShapeMismatch",
            Error::NonFiniteLoss { .. } => "NonFiniteLoss",
            Error::DegenerateDenominator { .. } => "DegenerateDenominator",
            Error::MissingModel(_) => "MissingModel",
            Error::TooFewPoints { .. } => "TooFewPoints",
            Error::SingleCluster => "SingleCluster",
            Error::PerplexityTooLarge { .. } => "PerplexityTooLarge",
            Error::InvalidArity(_) => "InvalidArity",
            Error::InvalidArgument(_) => "InvalidArgument",
            Error::ChecksumMismatch(_) => "ChecksumMismatch",
            Error::Io { .. } => "Io",
            Error::Image { .. } => "Image",
            Error::Json(_) => "Json",
        }
    }

    /// Whether the failure stems from bad input rather than a runtime fault.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFiniteLoss { .. } | Error::ShapeMismatch(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
