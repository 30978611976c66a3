//! Per-run checkpoints. The optimizer state carries angles, Adam and L-BFGS
//! memory, schedule weight, surrogate leader and the generator.

use std::path::{Path, PathBuf};

use aqc_core::optimizer::RunState;
use serde::{Deserialize, Serialize};

use crate::emit::{write_file, VERSION};
use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub aqc_version: String,
    pub config_hash: String,
    pub label: String,
    pub iteration: u64,
    pub state: RunState,
}

impl Checkpoint {
    pub fn new(config_hash: &str, label: &str, state: &RunState) -> Self {
        Self {
            aqc_version: VERSION.to_string(),
            config_hash: config_hash.to_string(),
            label: label.to_string(),
            iteration: state.iteration,
            state: state.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).map_err(|e| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        // write-then-rename so an interrupted save never leaves a torn file
        let tmp = path.with_extension("json.tmp");
        write_file(&tmp, text)?;
        std::fs::rename(&tmp, path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }

    /// Loads and checks the config hash.
    pub fn load(path: &Path, expected_hash: &str) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cp: Checkpoint = serde_json::from_str(&text).map_err(|e| HarnessError::Checkpoint {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        if cp.config_hash != expected_hash {
            return Err(HarnessError::HashMismatch {
                path: path.to_path_buf(),
                expected: expected_hash.to_string(),
                found: cp.config_hash,
            });
        }
        Ok(cp)
    }
}

pub fn checkpoint_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("checkpoint-{label}.json"))
}

/// Existing checkpoint for `label` in `dir`, if any.
pub fn find(dir: &Path, label: &str, expected_hash: &str) -> Result<Option<Checkpoint>> {
    let path = checkpoint_path(dir, label);
    if path.exists() {
        Checkpoint::load(&path, expected_hash).map(Some)
    } else {
        Ok(None)
    }
}
