//! Run manifests and atomic file output.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Serialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(path: &Path) -> CliResult<Self> {
        let bytes = fs::read(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(Artifact { path: path.display().to_string(), sha256: sha256_hex(&bytes) })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary: Option<serde_json::Value>,
    pub wall_clock_seconds: f64,
}

/// Collects what a command read and wrote, then writes the manifest last.
pub struct Recorder {
    command: String,
    started: Instant,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

impl Recorder {
    pub fn new(command: &str) -> Self {
        Recorder { command: command.to_owned(), started: Instant::now(), inputs: Vec::new(), outputs: Vec::new() }
    }

    pub fn input(&mut self, path: &Path) {
        self.inputs.push(path.to_path_buf());
    }

    /// Writes `bytes` to `path` atomically and records it as an output.
    pub fn output(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_atomic(path, bytes)?;
        self.outputs.push(path.to_path_buf());
        Ok(())
    }

    pub fn finish(
        self,
        manifest_path: &Path,
        config: serde_json::Value,
        seed: Option<u64>,
        summary: Option<serde_json::Value>,
    ) -> CliResult<()> {
        let manifest = Manifest {
            tool: "kervar",
            version: env!("CARGO_PKG_VERSION"),
            command: self.command,
            config,
            seed,
            inputs: self.inputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            outputs: self.outputs.iter().map(|p| Artifact::of(p)).collect::<CliResult<_>>()?,
            summary,
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::config(e.to_string()))?;
        write_atomic(manifest_path, text.as_bytes())
    }
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| CliError::config(format!("{}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

/// `<path>.manifest.json`.
pub fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}
