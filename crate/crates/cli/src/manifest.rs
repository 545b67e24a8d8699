//! Experiment manifests: every command records its run id, input hashes,
//! checkpoint lineage, and the exact artifacts it produced.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

#[derive(Debug, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub map_hash: String,
    /// Upstream checkpoints this run consumed (e.g. the fine-tune
    /// parent), name to path.
    pub lineage: Vec<(String, String)>,
    pub artifacts: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl ExperimentManifest {
    pub fn new(command: &str, config_text: &str, map_hash: &str) -> Self {
        let config_hash = sha256_hex(config_text.as_bytes());
        Self {
            run_id: format!("{command}-{}", &config_hash[..12]),
            command: command.to_string(),
            config_hash,
            map_hash: map_hash.to_string(),
            lineage: Vec::new(),
            artifacts: Vec::new(),
        }
    }

    pub fn add_artifact(&mut self, path: &Path) {
        self.artifacts.push(path.display().to_string());
    }

    pub fn add_lineage(&mut self, name: &str, path: &Path) {
        self.lineage.push((name.to_string(), path.display().to_string()));
    }

    /// Writes `<out>/<command>.manifest.json` and returns its path.
    pub fn write(&self, out_dir: &Path) -> std::io::Result<PathBuf> {
        let path = out_dir.join(format!("{}.manifest.json", self.command));
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, json)?;
        Ok(path)
    }
}
