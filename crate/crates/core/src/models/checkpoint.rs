//! JSON checkpoints:
//!
//! ```json
//! {"format_version": 1,
//!  "spec": {"input_dim": .., "hidden_layers": [..], "activation": "tanh",
//!           "output": "scalar-regression", "conditioning": "film-affine"},
//!  "param_count": N,
//!  "xi": [..]}
//! ```
//!
//! `xi` follows the declaration order documented on the `models` module.
//! Floats are written with shortest round-trip formatting, so a save/load
//! cycle is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchitectureSpec, AugmentedParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub spec: ArchitectureSpec,
    pub param_count: usize,
    pub xi: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(params: &AugmentedParams) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT_VERSION,
            spec: params.spec().clone(),
            param_count: params.xi().len(),
            xi: params.xi().to_vec(),
        }
    }

    pub fn into_params(self) -> Result<AugmentedParams> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint format version {}",
                self.format_version
            )));
        }
        if self.param_count != self.xi.len() {
            return Err(Error::Data(format!(
                "checkpoint declares {} parameters but stores {}",
                self.param_count,
                self.xi.len()
            )));
        }
        AugmentedParams::from_parts(self.spec, self.xi)
    }
}

pub fn save_checkpoint(path: &Path, params: &AugmentedParams) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint::from_params(params))
        .map_err(|e| Error::Data(e.to_string()))?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<AugmentedParams> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let checkpoint: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Parse {
        offset: byte_offset(&text, e.line(), e.column()),
        message: e.to_string(),
    })?;
    checkpoint.into_params()
}

fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    start + column.saturating_sub(1)
}
