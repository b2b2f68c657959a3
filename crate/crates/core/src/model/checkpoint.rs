//! `TPRF` checkpoint files.
//!
//! Layout (little-endian): magic `"TPRF"`, version `u32`, then layers, heads,
//! dim, ffn_dim as `u32`, dropout as `f32`, then every tensor as row-major
//! `f32`, layer by layer in [`TENSOR_NAMES`](super::TENSOR_NAMES) order.

use std::fs;
use std::path::Path;

use super::{ModelConfig, Parameters};
use crate::error::{ensure, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TPRF";
pub const CHECKPOINT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 4 * 4 + 4;

pub fn checkpoint_bytes(params: &Parameters<f32>) -> Vec<u8> {
    let cfg = params.config();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * params.count() as usize);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.layers(), cfg.heads(), cfg.dim(), cfg.ffn_dim()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.dropout().to_le_bytes());
    for t in params.iter_tensors() {
        for v in t.as_slice() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn parse_checkpoint(bytes: &[u8]) -> Result<Parameters<f32>> {
    ensure!(
        bytes.len() >= HEADER_LEN,
        Corruption,
        "checkpoint header truncated ({} bytes)",
        bytes.len()
    );
    ensure!(
        &bytes[..4] == CHECKPOINT_MAGIC,
        Format,
        "bad checkpoint magic {:?}",
        String::from_utf8_lossy(&bytes[..4])
    );
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
    let version = word(0);
    ensure!(
        version == CHECKPOINT_VERSION,
        Format,
        "unsupported checkpoint version {version}"
    );
    let (layers, heads, dim, ffn) = (
        word(1) as usize,
        word(2) as usize,
        word(3) as usize,
        word(4) as usize,
    );
    let dropout = f32::from_le_bytes(bytes[24..28].try_into().unwrap());
    let config = ModelConfig::new(layers, heads, dim, ffn)
        .and_then(|c| c.with_dropout(dropout))
        .map_err(|e| Error::Format(format!("checkpoint header: {e}")))?;

    let mut params = Parameters::<f32>::zeros(&config);
    let payload = &bytes[HEADER_LEN..];
    let expected = 4 * config.param_count() as usize;
    ensure!(
        payload.len() == expected,
        Corruption,
        "checkpoint payload is {} bytes, config needs {expected}",
        payload.len()
    );
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    for t in params.iter_tensors_mut() {
        for v in t.as_mut_slice() {
            *v = values.next().expect("length checked above");
        }
    }
    ensure!(
        params.all_finite(),
        Validation,
        "checkpoint contains non-finite weights"
    );
    Ok(params)
}

pub fn save_checkpoint(params: &Parameters<f32>, path: impl AsRef<Path>) -> Result<u64> {
    let path = path.as_ref();
    let bytes = checkpoint_bytes(params);
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(bytes.len() as u64)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Parameters<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&bytes)
}
