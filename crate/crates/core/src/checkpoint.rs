//! Versioned text checkpoints. Values are written in shortest round-trip
//! decimal form, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Activation, MlpModel, MlpSpec};
use crate::tensor::ParamVector;

pub const CHECKPOINT_FORMAT: &str = "flatland-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Block {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    layer_dims: Vec<usize>,
    activation: Activation,
    blocks: Vec<Block>,
}

pub fn to_string(model: &MlpModel) -> Result<String> {
    let p = model.params();
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: CHECKPOINT_VERSION,
        layer_dims: model.layer_dims().to_vec(),
        activation: model.activation(),
        blocks: p
            .layout()
            .entries()
            .iter()
            .map(|e| Block {
                name: e.name.clone(),
                shape: e.shape.clone(),
                values: p.block(e).to_vec(),
            })
            .collect(),
    };
    Ok(serde_json::to_string_pretty(&file)? + "\n")
}

pub fn from_str(text: &str) -> Result<MlpModel> {
    let file: CheckpointFile = serde_json::from_str(text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Parse(format!("not a checkpoint: format `{}`", file.format)));
    }
    if file.version != CHECKPOINT_VERSION {
        return Err(Error::Parse(format!("unsupported checkpoint version {}", file.version)));
    }
    let spec = MlpSpec::new(file.layer_dims, file.activation)?;
    let layout = spec.layout();
    if layout.entries().len() != file.blocks.len() {
        return Err(Error::Parse(format!(
            "expected {} parameter blocks, found {}",
            layout.entries().len(),
            file.blocks.len()
        )));
    }
    let mut values = Vec::with_capacity(layout.len());
    for (e, b) in layout.entries().iter().zip(&file.blocks) {
        if e.name != b.name || e.shape != b.shape || b.values.len() != e.len() {
            return Err(Error::Parse(format!(
                "block `{}` {:?} does not match expected `{}` {:?}",
                b.name, b.shape, e.name, e.shape
            )));
        }
        values.extend_from_slice(&b.values);
    }
    let params = ParamVector::new(std::sync::Arc::new(layout), values)?;
    MlpModel::from_params(spec, params)
}

pub fn save(model: &MlpModel, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, to_string(model)?.as_bytes())
}

pub fn load(path: &Path) -> Result<MlpModel> {
    from_str(&crate::io::read_text(path)?)
}
