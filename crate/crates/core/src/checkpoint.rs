//! Versioned JSON checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dataset::InteractionLog;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::training::TrainingLog;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Training randomness is re-derived from the master seed per epoch and
/// step, so this is all that is needed to continue a stream.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub master_seed: u64,
    pub epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config_hash: String,
    pub manifest_hash: String,
    pub anchor_checksum: String,
    pub config: RunConfig,
    pub rng: RngState,
    pub training: Option<TrainingLog>,
    pub model: ModelState,
}

impl Checkpoint {
    pub fn new(
        config: &RunConfig,
        manifest_hash: &str,
        model: ModelState,
        epoch: usize,
        training: Option<TrainingLog>,
    ) -> Self {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config_hash: config.hash(),
            manifest_hash: manifest_hash.to_string(),
            anchor_checksum: model.anchors.checksum(),
            config: config.clone(),
            rng: RngState {
                master_seed: config.seed,
                epoch,
            },
            training,
            model,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Load and verify internal consistency.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ck: Checkpoint = serde_json::from_str(&text)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::Incompatible(format!(
                "checkpoint version {} (this build reads {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(Error::Incompatible("checkpoint config does not match its recorded hash".into()));
        }
        if ck.model.anchors.checksum() != ck.anchor_checksum {
            return Err(Error::Incompatible("anchor bank does not match its recorded checksum".into()));
        }
        if ck.model.config != ck.config.model_config(ck.model.n_items())? {
            return Err(Error::Incompatible("model dimensions differ from the checkpoint config".into()));
        }
        Ok(ck)
    }

    /// The checkpoint must have been trained on a log with this catalog and
    /// the same data manifest.
    pub fn check_compatible(&self, log: &InteractionLog, manifest_hash: &str) -> Result<()> {
        if self.model.n_items() != log.num_items() {
            return Err(Error::Incompatible(format!(
                "checkpoint has {} items but the data has {}",
                self.model.n_items(),
                log.num_items()
            )));
        }
        if self.manifest_hash != manifest_hash {
            return Err(Error::Incompatible(format!(
                "data manifest {} differs from the checkpoint's {}",
                short(manifest_hash),
                short(&self.manifest_hash)
            )));
        }
        Ok(())
    }
}

pub fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
