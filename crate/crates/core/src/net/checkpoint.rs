//! Checkpoint files.
//!
//! ```text
//! magic      4 bytes  "CHCK"
//! json_len   u32 LE
//! json       metadata: format_version, config, [{name, shape}]
//! blob       every tensor in table order, f32 little-endian
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ChromaNet, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CHCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

pub fn save_checkpoint(params: &ModelParams<f32>, config: &ModelConfig, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    params.check_layout(config)?;
    let meta = Metadata {
        format_version: CHECKPOINT_VERSION,
        config: *config,
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&meta)?;
    let mut buf = Vec::with_capacity(8 + json.len() + 4 * params.num_values());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, t) in params.iter() {
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ChromaNet<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("{} is not a checkpoint", path.display())));
    }
    let json_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8 + json_len)
        .ok_or_else(|| Error::Corrupt("checkpoint metadata truncated".into()))?;
    let meta: Metadata = serde_json::from_slice(json)?;
    if meta.format_version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
            meta.format_version
        )));
    }
    meta.config.validate()?;
    let layout = meta.config.layout();
    let table_ok = layout.len() == meta.tensors.len()
        && layout
            .iter()
            .zip(&meta.tensors)
            .all(|((n, s), e)| *n == e.name && *s == e.shape);
    if !table_ok {
        return Err(Error::Format(format!(
            "tensor table does not match the {} layout",
            meta.config.variant
        )));
    }
    let blob = &bytes[8 + json_len..];
    let expected: usize = meta.tensors.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if blob.len() != 4 * expected {
        return Err(Error::Corrupt(format!(
            "checkpoint blob holds {} bytes, table needs {}",
            blob.len(),
            4 * expected
        )));
    }
    let mut values = blob.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let mut names = Vec::with_capacity(meta.tensors.len());
    let mut tensors = Vec::with_capacity(meta.tensors.len());
    for e in meta.tensors {
        let len = e.shape.iter().product();
        let data: Vec<f32> = values.by_ref().take(len).collect();
        tensors.push(Tensor::new(e.shape, data)?);
        names.push(e.name);
    }
    let params = ModelParams::from_parts(names, tensors)?;
    if !params.all_finite() {
        return Err(Error::Corrupt("checkpoint holds non-finite values".into()));
    }
    ChromaNet::new(meta.config, params)
}
