//! JSON checkpoints.
//!
//! ```json
//! {
//!   "format": "wadg-checkpoint-v1",
//!   "architecture": { "extractor": {...}, "classifier": {...}, "critic": {...},
//!                     "embed_layer": 2, "critic_mode": "per-pair", "num_domains": 3 },
//!   "tensors": {
//!     "extractor.0.weight": { "shape": [2, 64], "data": [ ... row-major ... ] },
//!     "extractor.0.bias":   { "shape": [1, 64], "data": [ ... ] },
//!     "classifier.0.weight": ...,
//!     "critic.<k>.<layer>.weight": ...
//!   }
//! }
//! ```
//!
//! Keys are sorted; floats are written in shortest round-trip form, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Linear, Mlp, ModelBundle};
use crate::diffmath::Tensor;
use crate::error::{Result, WadgError};

pub const CHECKPOINT_FORMAT: &str = "wadg-checkpoint-v1";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub architecture: Architecture,
    pub tensors: BTreeMap<String, Tensor>,
}

fn put(tensors: &mut BTreeMap<String, Tensor>, prefix: &str, mlp: &Mlp) {
    for (k, l) in mlp.layers().iter().enumerate() {
        tensors.insert(format!("{prefix}.{k}.weight"), l.weight.clone());
        tensors.insert(format!("{prefix}.{k}.bias"), l.bias.clone());
    }
}

fn take(
    tensors: &mut BTreeMap<String, Tensor>,
    prefix: &str,
    spec: &super::MlpSpec,
) -> Result<Mlp> {
    let mut layers = Vec::with_capacity(spec.num_layers());
    for k in 0..spec.num_layers() {
        let mut get = |what: &str| {
            let key = format!("{prefix}.{k}.{what}");
            tensors
                .remove(&key)
                .ok_or_else(|| WadgError::Invalid(format!("checkpoint is missing `{key}`")))
        };
        let weight = get("weight")?;
        let bias = get("bias")?;
        layers.push(Linear { weight, bias });
    }
    Mlp::from_layers(spec.clone(), layers)
}

impl Checkpoint {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        let mut tensors = BTreeMap::new();
        put(&mut tensors, "extractor", &bundle.extractor);
        put(&mut tensors, "classifier", &bundle.classifier);
        for (k, c) in bundle.critics.iter().enumerate() {
            put(&mut tensors, &format!("critic.{k}"), c);
        }
        Self {
            format: CHECKPOINT_FORMAT.to_string(),
            architecture: bundle.arch.clone(),
            tensors,
        }
    }

    pub fn into_bundle(mut self) -> Result<ModelBundle> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(WadgError::Invalid(format!(
                "unsupported checkpoint format `{}`",
                self.format
            )));
        }
        let arch = self.architecture.clone();
        arch.validate()?;
        let extractor = take(&mut self.tensors, "extractor", &arch.extractor)?;
        let classifier = take(&mut self.tensors, "classifier", &arch.classifier)?;
        let critics = (0..arch.num_critics())
            .map(|k| take(&mut self.tensors, &format!("critic.{k}"), &arch.critic))
            .collect::<Result<_>>()?;
        if let Some(extra) = self.tensors.keys().next() {
            return Err(WadgError::Invalid(format!(
                "checkpoint has unexpected tensor `{extra}`"
            )));
        }
        Ok(ModelBundle {
            arch,
            extractor,
            classifier,
            critics,
        })
    }
}

pub fn save_checkpoint(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(&Checkpoint::from_bundle(bundle))?;
    std::fs::write(path, json).map_err(|e| WadgError::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| WadgError::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text)?;
    ck.into_bundle()
}
