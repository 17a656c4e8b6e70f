//! Output directories and the CSV/JSON artifacts written into them.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Makes `dir` ready for a command that writes `artifacts` into it.
///
/// A missing or empty directory is fine. A non-empty one is refused unless
/// `force` is set, in which case only the named artifacts are removed.
pub fn prepare_out_dir(dir: &Path, force: bool, artifacts: &[&str]) -> CliResult<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(CliError::Config(format!("{} is not a directory", dir.display())));
        }
        let mut entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
        if entries.next().is_some() {
            if !force {
                return Err(CliError::OutputExists(dir.to_path_buf()));
            }
            for name in artifacts {
                remove_path(&dir.join(name))?;
            }
        }
    }
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn remove_path(p: &Path) -> CliResult<()> {
    let result = if p.is_dir() {
        fs::remove_dir_all(p)
    } else if p.exists() {
        fs::remove_file(p)
    } else {
        return Ok(());
    };
    result.map_err(|e| CliError::io(p, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(ablation_lab::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::table(path, e.to_string()))
}

/// Row-at-a-time CSV writer that remembers its path for error reports.
pub struct Table {
    path: PathBuf,
    writer: csv::Writer<fs::File>,
}

impl Table {
    pub fn create(path: &Path, header: &[&str]) -> CliResult<Self> {
        let mut writer = csv::Writer::from_path(path).map_err(|e| CliError::csv(path, e))?;
        writer.write_record(header).map_err(|e| CliError::csv(path, e))?;
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn row<I, S>(&mut self, fields: I) -> CliResult<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(|e| CliError::csv(&self.path, e))
    }

    pub fn finish(mut self) -> CliResult<()> {
        self.writer.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

/// Shortest decimal that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// Parses an optional float field; the empty string is `None`.
pub fn parse_opt(field: &str) -> Result<Option<f64>, std::num::ParseFloatError> {
    if field.is_empty() {
        Ok(None)
    } else {
        field.parse().map(Some)
    }
}
