//! Versioned JSON checkpoints. Floats are written with shortest round-trip
//! formatting so save followed by load reproduces every weight bit.

use std::path::Path;

use qlif_core::encoding::EncoderConfig;
use qlif_core::network::Model;

use crate::data::DatasetName;
use crate::error::{Error, IoContext, Result};
use crate::fsutil::write_atomic;

pub const FORMAT: &str = "qlif-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: Model,
    pub encoder: EncoderConfig,
    /// Dataset the model was trained on, if any.
    pub dataset: Option<DatasetName>,
}

impl Checkpoint {
    pub fn new(model: Model, encoder: EncoderConfig, dataset: Option<DatasetName>) -> Self {
        Self { format: FORMAT.into(), version: VERSION, model, encoder, dataset }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        Ok(serde_json::to_vec_pretty(self)?)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_slice(bytes)?;
        let format = value.get("format").and_then(|v| v.as_str()).unwrap_or_default();
        if format != FORMAT {
            return Err(Error::Checkpoint(format!("not a checkpoint (format '{format}')")));
        }
        let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0);
        if version != VERSION as u64 {
            return Err(Error::Checkpoint(format!("unsupported version {version}, expected {VERSION}")));
        }
        let ckpt: Checkpoint = serde_json::from_value(value)?;
        ckpt.model.validate()?;
        ckpt.encoder.validate()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_json()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read(path).at(path)?)
    }
}
