//! Single-file model archive.
//!
//! Layout: the 8-byte [`CHECKPOINT_MAGIC`], a little-endian `u64` header
//! length, a canonical (sorted-key) JSON header, then every parameter's
//! elements as little-endian `f64` in header order.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::features::Normalization;
use super::network::EtaModel;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"FMAETA\x00\x01";
pub const CHECKPOINT_VERSION: &str = "fma-eta/1";

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    config: ModelConfig,
    normalization: Normalization,
    params: Vec<ParamEntry>,
}

pub(crate) fn to_bytes(model: &EtaModel) -> Result<Vec<u8>> {
    let header = Header {
        version: CHECKPOINT_VERSION.to_string(),
        config: model.config().clone(),
        normalization: *model.normalization(),
        params: model
            .parameter_names()
            .iter()
            .zip(model.parameters())
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    // Going through `Value` sorts object keys.
    let json = serde_json::to_string(&serde_json::to_value(&header)?)?;
    let payload: usize = model.parameters().iter().map(Tensor::numel).sum();
    let mut out = Vec::with_capacity(16 + json.len() + 8 * payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for t in model.parameters() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub(crate) fn from_bytes(bytes: &[u8]) -> Result<EtaModel> {
    let bad = |msg: String| Error::Checkpoint(msg);
    if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("not an fma-eta checkpoint".into()));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|n| n.checked_add(16))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad(format!("header length {header_len} exceeds file size")))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| bad(format!("malformed header: {e}")))?;
    if header.version != CHECKPOINT_VERSION {
        return Err(bad(format!(
            "unsupported version {:?}, expected {CHECKPOINT_VERSION:?}",
            header.version
        )));
    }
    let mut model = EtaModel::new(header.config, header.normalization, &mut ChaCha8Rng::seed_from_u64(0))?;
    let mut rest = &bytes[header_end..];
    let mut named = Vec::with_capacity(header.params.len());
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        let (chunk, tail) = rest
            .split_at_checked(8 * n)
            .ok_or_else(|| bad(format!("payload of {:?} is truncated", entry.name)))?;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| bad(e.to_string()))?;
        named.push((entry.name, tensor));
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(bad(format!("{} trailing bytes after the last parameter", rest.len())));
    }
    model.replace_parameters(named)?;
    Ok(model)
}

pub fn save_checkpoint(model: &EtaModel, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<EtaModel> {
    from_bytes(&fs::read(path)?)
}
