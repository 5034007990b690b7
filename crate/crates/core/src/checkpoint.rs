//! JSON checkpoints. Parameter values are stored as base64 of little-endian
//! f64 so a reload is bitwise exact.

use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, RefNet};
use crate::tensor::Tensor;

pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBlob {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen_rows: Option<Vec<bool>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocab_hash: String,
    /// Training configuration snapshot, free-form.
    #[serde(default)]
    pub train_config: serde_json::Value,
    pub epoch: usize,
    pub val_bleu4: f64,
    /// Reward name used for fine-tuning, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reward: Option<String>,
    pub params: Vec<ParamBlob>,
}

fn encode(values: &[f64]) -> String {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    STANDARD.encode(bytes)
}

fn decode(name: &str, s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::data(format!("parameter {name}: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::data(format!("parameter {name}: truncated data")));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

impl Checkpoint {
    pub fn from_model(model: &RefNet, vocab_hash: &str) -> Self {
        let params = model
            .params
            .iter()
            .map(|(_, p)| ParamBlob {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: encode(p.value.data()),
                frozen_rows: p.frozen_rows.clone(),
            })
            .collect();
        Self {
            version: VERSION,
            config: model.config.clone(),
            vocab_hash: vocab_hash.to_string(),
            train_config: serde_json::Value::Null,
            epoch: 0,
            val_bleu4: 0.0,
            reward: None,
            params,
        }
    }

    /// Rebuilds the model from the config, then overwrites every parameter.
    pub fn into_model(&self) -> Result<RefNet> {
        if self.version != VERSION {
            return Err(Error::data(format!("unsupported checkpoint version {}", self.version)));
        }
        let mut model = RefNet::new(self.config.clone(), 0)?;
        if model.params.len() != self.params.len() {
            return Err(Error::data(format!(
                "checkpoint has {} parameters, model expects {}",
                self.params.len(),
                model.params.len()
            )));
        }
        for blob in &self.params {
            let id = model
                .params
                .id(&blob.name)
                .ok_or_else(|| Error::data(format!("unknown parameter {}", blob.name)))?;
            let value = Tensor::new(blob.shape.clone(), decode(&blob.name, &blob.data)?)?;
            model.params.set_value(id, value)?;
            if let Some(rows) = &blob.frozen_rows {
                model.params.set_frozen_rows(id, rows.clone());
            }
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }

    /// SHA-256 of the parameter blobs, in order.
    pub fn param_hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.params {
            h.update(p.name.as_bytes());
            h.update(p.data.as_bytes());
        }
        format!("{:x}", h.finalize())
    }
}
