//! Self-describing JSON checkpoints: the configuration plus every named tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ModelConfig;
use super::network::Model;

const FORMAT: &str = "mlcgcn-checkpoint";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<NamedTensor>,
}

/// Serializes a model to the checkpoint text format.
pub fn to_checkpoint_string<T: Scalar>(model: &Model<T>) -> Result<String> {
    let file = CheckpointFile {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|(name, t)| NamedTensor {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                data: t.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&file).map_err(|e| Error::Format(e.to_string()))?;
    text.push('\n');
    Ok(text)
}

pub fn from_checkpoint_str<T: Scalar>(text: &str) -> Result<Model<T>> {
    let file: CheckpointFile =
        serde_json::from_str(text).map_err(|e| Error::Format(format!("checkpoint: {e}")))?;
    if file.format != FORMAT || file.version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint {} v{}",
            file.format, file.version
        )));
    }
    let named = file
        .params
        .into_iter()
        .map(|p| {
            let data = p.data.into_iter().map(T::of).collect();
            Tensor::new(p.shape, data).map(|t| (p.name, t))
        })
        .collect::<Result<Vec<_>>>()?;
    Model::from_named(file.config, named)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, to_checkpoint_string(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_checkpoint_str(&text)
}
