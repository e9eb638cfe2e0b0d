//! Run configuration, its content hash, and the manifest written next to outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Everything that determines the numbers a command produces.
///
/// Output locations are deliberately left out, so the same computation written
/// to two places carries the same hash.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub params: BTreeMap<String, Value>,
}

impl RunConfig {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_string(),
            params: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.params.insert(key.to_string(), value.into());
        self
    }

    /// Canonical JSON: keys sorted, no whitespace.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn sha256(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[derive(Debug, Serialize)]
struct Versions {
    vortbif_cli: &'static str,
    vortbif_core: &'static str,
}

#[derive(Debug, Serialize)]
struct ManifestDoc<'a> {
    manifest_sha256: String,
    config: &'a RunConfig,
    versions: Versions,
    seed: Option<u64>,
    outputs: Vec<String>,
    wall_time_seconds: f64,
}

/// Tracks one invocation: its configuration, start time and written files.
pub struct Run {
    pub config: RunConfig,
    pub hash: String,
    seed: Option<u64>,
    started: Instant,
    outputs: Vec<PathBuf>,
}

impl Run {
    pub fn new(config: RunConfig, seed: Option<u64>) -> Self {
        let hash = config.sha256();
        Self {
            config,
            hash,
            seed,
            started: Instant::now(),
            outputs: Vec::new(),
        }
    }

    pub fn record_output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    /// Manifest as pretty JSON; the wall time lives here and nowhere else.
    pub fn manifest_json(&self) -> String {
        let doc = ManifestDoc {
            manifest_sha256: self.hash.clone(),
            config: &self.config,
            versions: Versions {
                vortbif_cli: env!("CARGO_PKG_VERSION"),
                vortbif_core: vortbif_core::VERSION,
            },
            seed: self.seed,
            outputs: self.outputs.iter().map(|p| p.display().to_string()).collect(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
        };
        let mut text = serde_json::to_string_pretty(&doc).expect("manifest serializes");
        text.push('\n');
        text
    }
}

/// `<out>.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
