//! Strict TOML configs. Command-line overrides are spliced into the parsed
//! table before typed deserialization, so they obey the same schema.

use std::fs;
use std::path::{Path, PathBuf};

use kervar_core::dynamics::{VarModel, DEFAULT_BURN_IN};
use kervar_core::kernels::MultivariateKernelSpec;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

fn default_burn_in() -> usize {
    DEFAULT_BURN_IN
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: VarModel,
    /// Number of recorded time steps.
    pub t: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Trajectory CSV; relative paths resolve against the config's directory.
    pub data: PathBuf,
    pub p: usize,
    pub kernel: MultivariateKernelSpec,
    pub lambda: f64,
}

/// A config override from the command line.
pub struct Override {
    pub key: &'static str,
    pub value: toml::Value,
}

impl Override {
    pub fn new(key: &'static str, value: impl Into<toml::Value>) -> Self {
        Override { key, value: value.into() }
    }
}

pub fn require_file(path: &Path) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::config(format!("{}: no such file", path.display())))
    }
}

/// Fails unless the directory that will hold `path` exists.
pub fn require_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(CliError::config(format!("{}: output directory does not exist", dir.display())))
        }
        _ => Ok(()),
    }
}

pub fn load<T: DeserializeOwned>(path: &Path, overrides: Vec<Override>) -> CliResult<T> {
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let mut table: toml::Table =
        text.parse().map_err(|e: toml::de::Error| CliError::config(format!("{}: {e}", path.display())))?;
    for o in overrides {
        table.insert(o.key.to_owned(), o.value);
    }
    toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::config(format!("{}: {}", path.display(), e.message())))
}

/// Resolves `p` against the directory of `config` unless it is absolute.
pub fn relative_to(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        return p.to_path_buf();
    }
    match config.parent() {
        Some(dir) => dir.join(p),
        None => p.to_path_buf(),
    }
}

pub fn to_json<T: Serialize>(value: &T) -> CliResult<serde_json::Value> {
    serde_json::to_value(value).map_err(|e| CliError::config(e.to_string()))
}
