//! Versioned JSON checkpoints. Floats round-trip exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::ode::SolverSpec;

pub const CHECKPOINT_FORMAT: &str = "concat-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub model: ModelConfig,
    pub solver: SolverSpec,
    pub seed: u64,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn new(model: &Model, solver: &SolverSpec, seed: u64) -> Self {
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: model.config.clone(),
            solver: solver.clone(),
            seed,
            tensors: model.tensors.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Serde(format!("checkpoint: {e}")))?;
        if c.format != CHECKPOINT_FORMAT || c.version != CHECKPOINT_VERSION {
            return Err(Error::Serde(format!(
                "unsupported checkpoint {} v{} (expected {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION})",
                c.format, c.version
            )));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Fails on the first width that differs from `expected`, naming both.
    pub fn check_widths(&self, expected: &ModelConfig) -> Result<()> {
        for ((what, have), (_, want)) in self.model.widths().into_iter().zip(expected.widths()) {
            if have != want {
                return Err(Error::WidthMismatch { what: what.into(), checkpoint: have, config: want });
            }
        }
        Ok(())
    }

    pub fn into_model(self) -> Result<Model> {
        Model::from_tensors(self.model, self.tensors)
    }
}
