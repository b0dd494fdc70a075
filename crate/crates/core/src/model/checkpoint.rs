//! JSON checkpoint: format tag, version, model config and every weight
//! array as `{name, shape, data}`, in [`ModelParams::tensors`] order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "ucahar-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub len: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<TensorRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model) -> Self {
        let tensors = model
            .params
            .tensor_names()
            .into_iter()
            .zip(model.params.tensors())
            .map(|(name, t)| TensorRecord { name, len: t.len(), data: t.to_vec() })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            tensors,
        }
    }

    pub fn into_model(self) -> Result<Model> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut params = ModelParams::init(&self.config)?;
        let names = params.tensor_names();
        if names.len() != self.tensors.len() {
            return Err(Error::invalid("checkpoint tensor count does not match config"));
        }
        for ((slot, name), rec) in params.tensors_mut().into_iter().zip(&names).zip(&self.tensors) {
            if *name != rec.name || slot.len() != rec.data.len() || rec.len != rec.data.len() {
                return Err(Error::invalid(format!("checkpoint tensor `{}` does not match `{name}`", rec.name)));
            }
            slot.copy_from_slice(&rec.data);
        }
        Model::from_parts(self.config, params)
    }
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let json = serde_json::to_string(&Checkpoint::from_model(model)).map_err(|e| Error::parse(path, e))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::parse(path, e))?;
    ck.into_model()
}
