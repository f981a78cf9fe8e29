//! JSON checkpoint: a versioned header followed by named tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Network, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "selcl-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub scalar: String,
    pub architecture: Architecture,
    /// Free-form metadata such as the run config, stored verbatim.
    #[serde(default)]
    pub meta: serde_json::Value,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(net: &Network<T>, meta: serde_json::Value) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            scalar: T::type_name().to_string(),
            architecture: *net.arch(),
            meta,
            tensors: net
                .params()
                .tensors()
                .iter()
                .map(|t| StoredTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| v.as_f64()).collect(),
                })
                .collect(),
        }
    }

    pub fn to_network<T: Scalar>(&self) -> Result<Network<T>> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        let mut tensors = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::dims(t.shape.iter().product(), t.data.len(), t.name.clone()));
            }
            tensors.push(Tensor {
                name: t.name.clone(),
                shape: t.shape.clone(),
                data: t.data.iter().map(|&v| T::of(v)).collect(),
            });
        }
        let params = ParamSet { tensors };
        params.check_finite()?;
        Network::from_params(self.architecture, params)
    }
}

pub fn save_checkpoint<T: Scalar>(
    net: &Network<T>,
    meta: serde_json::Value,
    path: impl AsRef<Path>,
) -> Result<()> {
    let ckpt = Checkpoint::from_network(net, meta);
    std::fs::write(path, serde_json::to_string(&ckpt)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}
