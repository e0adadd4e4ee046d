//! Self-describing run manifests: the resolved configuration, input
//! hashes, and artifact paths of one training run. Re-running with the
//! same manifest inputs reproduces the outputs byte for byte.

use crate::train::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    /// Resolved configuration after defaults < config file < flags.
    pub config: TrainConfig,
    /// SHA-256 of every input file, keyed by role (train, labels,
    /// lexicon, test.<lang>).
    pub input_hashes: BTreeMap<String, String>,
    /// Output files this run wrote.
    pub artifacts: BTreeMap<String, String>,
    pub best_epoch: usize,
}

pub fn sha256_hex(path: &Path) -> std::io::Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text)
    }

    pub fn load(path: &Path) -> std::io::Result<RunManifest> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}
