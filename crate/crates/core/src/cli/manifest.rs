use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::training::TrainConfig;

/// SHA-256 of the canonical `key = value` rendering of `config`.
pub fn config_hash(config: &TrainConfig) -> String {
    hex::encode(Sha256::digest(config.to_kv_string().as_bytes()))
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Record of one training run and the artifacts it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub config_hash: String,
    pub seed: u64,
    pub config_path: PathBuf,
    pub dataset_path: PathBuf,
    pub bundle_path: PathBuf,
    pub checkpoint_path: PathBuf,
    pub updates_csv: PathBuf,
    pub epochs_csv: PathBuf,
    pub resumed_from: Option<PathBuf>,
}

impl RunManifest {
    /// Run id derived from the config hash and the start time.
    pub fn run_id(config: &TrainConfig, started_unix: u64) -> String {
        format!("{}-{started_unix}", &config_hash(config)[..12])
    }

    /// Whether `config_hash` still describes `config`.
    pub fn matches(&self, config: &TrainConfig) -> bool {
        self.config_hash == config_hash(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_tracks_config() {
        let a = TrainConfig::default();
        let mut b = a.clone();
        assert_eq!(config_hash(&a), config_hash(&b));
        b.zeta = 0.3;
        assert_ne!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
