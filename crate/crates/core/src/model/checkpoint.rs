//! Binary checkpoint format.
//!
//! Layout: magic `FQC1`, version (u32 LE), header length (u64 LE), a JSON
//! header (config, normalizer, training position, tensor manifest), then every
//! parameter buffer as little-endian f64 in manifest order. Fully
//! deterministic, so saving the same model twice yields identical bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Normalizer;
use crate::model::{Forecaster, ModelConfig};
use crate::tensor::Tensor;
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"FQC1";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    steps_per_day: usize,
    normalizer: Normalizer,
    epoch: usize,
    best_val_loss: f64,
    tensors: Vec<TensorEntry>,
}

pub struct Checkpoint {
    pub model: Forecaster,
    pub normalizer: Normalizer,
    pub epoch: usize,
    pub best_val_loss: f64,
}

pub fn save(
    model: &Forecaster,
    normalizer: &Normalizer,
    epoch: usize,
    best_val_loss: f64,
    path: &Path,
) -> Result<()> {
    let params = model.params();
    let header = Header {
        config: model.config.clone(),
        steps_per_day: model.steps_per_day,
        normalizer: normalizer.clone(),
        epoch,
        best_val_loss,
        tensors: params
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;
    let payload: usize = params.iter().map(|(_, t)| t.numel() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + header_json.len() + payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in &params {
        for v in t.real_data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fail = |msg: &str| Error::Checkpoint(format!("{}: {msg}", path.display()));
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(fail("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes
        .get(16..16 + header_len)
        .ok_or_else(|| fail("truncated header"))?;
    let header: Header =
        serde_json::from_slice(body).map_err(|e| fail(&format!("corrupt header: {e}")))?;

    let mut payload = &bytes[16 + header_len..];
    let mut model = Forecaster::new(&header.config, header.steps_per_day)?;
    let slots = model.params_mut();
    if slots.len() != header.tensors.len() {
        return Err(Error::Checkpoint(format!(
            "{}: manifest lists {} tensors but this config builds {}",
            path.display(),
            header.tensors.len(),
            slots.len()
        )));
    }
    for ((name, slot), entry) in slots.into_iter().zip(&header.tensors) {
        if name != entry.name || slot.shape() != entry.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "{}: expected tensor {name} {:?}, manifest has {} {:?}",
                path.display(),
                slot.shape(),
                entry.name,
                entry.shape
            )));
        }
        let count = slot.numel();
        if payload.len() < count * 8 {
            return Err(fail("truncated payload"));
        }
        let data: Vec<f64> = payload[..count * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint(format!(
                "{}: tensor {name} holds non-finite values",
                path.display()
            )));
        }
        payload = &payload[count * 8..];
        *slot = Tensor::param(data, &entry.shape)?;
    }
    if !payload.is_empty() {
        return Err(fail("trailing bytes after payload"));
    }
    Ok(Checkpoint {
        model,
        normalizer: header.normalizer,
        epoch: header.epoch,
        best_val_loss: header.best_val_loss,
    })
}
