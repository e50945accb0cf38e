use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Running,
    Succeeded,
    Failed,
}

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub argv: Vec<String>,
    /// Fully resolved inputs; enough to repeat the run.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: BTreeMap<String, PathBuf>,
    pub started_at: String,
    pub finished_at: Option<String>,
    pub status: RunStatus,
    pub exit_code: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Where a command's manifest goes: `manifest.json` inside an output
/// directory, or `<file>.manifest.json` beside an output file.
pub fn manifest_path_for(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join(MANIFEST_FILE)
    } else {
        let mut name = output.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        output.with_file_name(name)
    }
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_os_string();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)
        .and_then(|_| fs::rename(&tmp, path))
        .map_err(|e| CliError::io(path, e))
}

/// A manifest on disk that is rewritten as the run progresses.
#[derive(Debug)]
pub struct ManifestHandle {
    path: PathBuf,
    manifest: RunManifest,
}

impl ManifestHandle {
    pub fn start(
        path: PathBuf,
        command: &str,
        argv: &[String],
        config: serde_json::Value,
        seeds: BTreeMap<String, u64>,
    ) -> Result<Self, CliError> {
        let handle = Self {
            path,
            manifest: RunManifest {
                tool: env!("CARGO_PKG_NAME").to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                command: command.to_string(),
                argv: argv.to_vec(),
                config,
                seeds,
                artifacts: BTreeMap::new(),
                started_at: now(),
                finished_at: None,
                status: RunStatus::Running,
                exit_code: None,
                error: None,
            },
        };
        handle.write()?;
        Ok(handle)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn artifact(&mut self, name: &str, path: &Path) {
        self.manifest.artifacts.insert(name.to_string(), path.to_path_buf());
    }

    pub fn set_config(&mut self, config: serde_json::Value) {
        self.manifest.config = config;
    }

    fn write(&self) -> Result<(), CliError> {
        let json = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        write_atomic(&self.path, (json + "\n").as_bytes())
    }

    /// Records the outcome and passes it through. A failure to write the
    /// final manifest only replaces a successful outcome.
    pub fn finish<T>(mut self, outcome: Result<T, CliError>) -> Result<T, CliError> {
        self.manifest.finished_at = Some(now());
        match &outcome {
            Ok(_) => {
                self.manifest.status = RunStatus::Succeeded;
                self.manifest.exit_code = Some(0);
            }
            Err(e) => {
                self.manifest.status = RunStatus::Failed;
                self.manifest.exit_code = Some(e.exit_code());
                self.manifest.error = Some(e.to_string());
            }
        }
        let written = self.write();
        match outcome {
            Ok(v) => written.map(|_| v),
            Err(e) => {
                if let Err(w) = written {
                    log::warn!("could not finalize {}: {w}", self.path.display());
                }
                Err(e)
            }
        }
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}
