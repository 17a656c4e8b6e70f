use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

/// Exit status for a successful command.
pub const EXIT_OK: i32 = 0;
/// Exit status for bad input, flags or configuration.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit status for failures while running a valid request.
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] ablation_lab::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("output directory {} is not empty; pass --force to overwrite", .0.display())]
    OutputExists(PathBuf),
    #[error("malformed table {}: {message}", path.display())]
    Table { path: PathBuf, message: String },
    #[error("i/o error at {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Config(_) => "InvalidConfig",
            CliError::OutputExists(_) => "OutputExists",
            CliError::Table { .. } => "MalformedTable",
            CliError::Io { .. } => "Io",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => EXIT_RUNTIME,
            CliError::Io { .. } => EXIT_RUNTIME,
            _ => EXIT_VALIDATION,
        }
    }

    pub(crate) fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub(crate) fn table(path: impl AsRef<Path>, message: impl Into<String>) -> Self {
        CliError::Table {
            path: path.as_ref().to_path_buf(),
            message: message.into(),
        }
    }

    pub(crate) fn csv(path: impl AsRef<Path>, e: csv::Error) -> Self {
        Self::table(path, e.to_string())
    }

    /// Structured details for the error report.
    fn details(&self) -> Value {
        use ablation_lab::Error as E;
        match self {
            CliError::Core(e) => match e {
                E::MalformedLine { line, .. } => json!({ "line": line }),
                E::MissingFrame(id) => json!({ "frame_id": id }),
                E::InvalidWindow { index, .. } => json!({ "index": index }),
                E::NonFiniteLoss { step, .. } => json!({ "step": step }),
                E::DegenerateDenominator { row, col } => json!({ "row": row, "col": col }),
                E::MissingModel(c) => json!({ "config": c }),
                E::Io { path, .. } | E::Image { path, .. } => json!({ "path": path }),
                _ => json!({}),
            },
            CliError::OutputExists(p) => json!({ "path": p }),
            CliError::Table { path, .. } | CliError::Io { path, .. } => json!({ "path": path }),
            CliError::Config(_) => json!({}),
        }
    }

    /// The machine-readable report written to standard error.
    pub fn report(&self, command: &str) -> ErrorReport {
        let mut context = self.details();
        context["command"] = json!(command);
        ErrorReport {
            kind: self.kind().to_string(),
            message: self.to_string(),
            context,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ErrorReport {
    pub kind: String,
    pub message: String,
    pub context: Value,
}
