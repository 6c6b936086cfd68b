//! Self-describing JSON export of a fitted emulator.
//!
//! The document stores the hyperparameters, the jitter, the likelihood value,
//! the training data and a SHA-256 checksum of that data. Loading
//! refactorizes the correlation matrix at the stored jitter, which reproduces
//! the original predictions bit for bit.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{EmulatorConfig, EmulatorError, FittedEmulator, Hyperparameters};
use crate::domain::{MultiSourceDataset, ProblemSpace};

pub const FORMAT: &str = "mfbo-emulator/1";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported format `{0}`")]
    Format(String),
    #[error("data checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },
    #[error(transparent)]
    Emulator(#[from] EmulatorError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorDocument {
    pub format: String,
    pub space: ProblemSpace,
    pub config: EmulatorConfig,
    pub hyperparameters: Hyperparameters,
    pub jitter: f64,
    pub nll: f64,
    pub response_mean: f64,
    pub response_scale: f64,
    pub dataset: MultiSourceDataset,
    pub data_checksum: String,
}

pub(crate) fn checksum(data: &MultiSourceDataset) -> String {
    let bytes = serde_json::to_vec(data).expect("dataset serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl EmulatorDocument {
    pub fn to_json(&self) -> Result<String, ExportError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, ExportError> {
        let doc: Self = serde_json::from_str(text)?;
        if doc.format != FORMAT {
            return Err(ExportError::Format(doc.format));
        }
        Ok(doc)
    }

    /// Verifies the checksum and rebuilds the emulator.
    pub fn load(&self) -> Result<FittedEmulator, ExportError> {
        let computed = checksum(&self.dataset);
        if computed != self.data_checksum {
            return Err(ExportError::Checksum { stored: self.data_checksum.clone(), computed });
        }
        let mut config = self.config.clone();
        config.jitter_ladder = vec![self.jitter];
        let mut em = FittedEmulator::with_hyperparameters(&self.space, &self.dataset, &config, &self.hyperparameters)?;
        em.config.jitter_ladder = self.config.jitter_ladder.clone();
        em.nll = self.nll;
        em.diagnostics.nll = self.nll;
        Ok(em)
    }
}

impl FittedEmulator {
    pub fn export(&self) -> EmulatorDocument {
        EmulatorDocument {
            format: FORMAT.to_string(),
            space: self.space.clone(),
            config: self.config.clone(),
            hyperparameters: self.hyper.clone(),
            jitter: self.jitter,
            nll: self.nll,
            response_mean: self.geom.mean,
            response_scale: self.geom.scale,
            dataset: self.dataset.clone(),
            data_checksum: checksum(&self.dataset),
        }
    }
}
