//! JSON checkpoints: `{"version", "config", "tensors": {name: {"shape", "data"}}}`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams};
use crate::{Error, Result};

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub config: Architecture,
    pub tensors: BTreeMap<String, TensorRecord>,
}

impl Checkpoint {
    pub fn from_params(params: &ModelParams) -> Self {
        let tensors = params
            .tensors()
            .into_iter()
            .map(|t| {
                (
                    t.name,
                    TensorRecord {
                        shape: t.shape,
                        data: t.data.to_vec(),
                    },
                )
            })
            .collect();
        Self {
            version: CHECKPOINT_VERSION,
            config: params.arch.clone(),
            tensors,
        }
    }

    /// Rebuilds parameters, checking every tensor's shape against the
    /// architecture in `config`.
    pub fn into_params(self) -> Result<ModelParams> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported checkpoint version {}",
                self.version
            )));
        }
        let mut params = ModelParams::init(&self.config, 0);
        let expected: Vec<(String, Vec<usize>)> = params.tensors().into_iter().map(|t| (t.name, t.shape)).collect();
        if expected.len() != self.tensors.len() {
            return Err(Error::Schema(format!(
                "checkpoint has {} tensors, architecture needs {}",
                self.tensors.len(),
                expected.len()
            )));
        }
        for ((name, shape), slot) in expected.into_iter().zip(params.tensors_mut()) {
            let record = self
                .tensors
                .get(&name)
                .ok_or_else(|| Error::Schema(format!("checkpoint is missing tensor {name}")))?;
            if record.shape != shape {
                return Err(Error::Schema(format!(
                    "tensor {name} has shape {:?}, expected {shape:?}",
                    record.shape
                )));
            }
            if record.data.len() != slot.len() {
                return Err(Error::dim(slot.len(), record.data.len(), format!("tensor {name}")));
            }
            if !record.data.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite("checkpoint tensor"));
            }
            slot.copy_from_slice(&record.data);
        }
        Ok(params)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serialization cannot fail")
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, Checkpoint::from_params(params).to_json()).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let ckpt: Checkpoint =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
    ckpt.into_params()
}
