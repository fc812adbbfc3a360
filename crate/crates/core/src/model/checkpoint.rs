//! Binary checkpoint format.
//!
//! Layout: magic bytes `ULLM`; format version (u32 LE); the model config as
//! n_layers, n_heads, d_model, d_ffn, vocab_size, max_len (each u32 LE) and
//! seed (u64 LE); every parameter as little-endian f32 in the flatten order
//! of [`super::Layout`]; finally a CRC32 (IEEE, u32 LE) of all preceding
//! bytes. Round trips are bit-exact when the working type is f32.

use std::path::Path;

use crate::real::Real;

use super::{Layout, ModelConfig, ModelError, Parameters};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ULLM";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint<T: Real>(params: &Parameters<T>, path: &Path) -> Result<(), ModelError> {
    let bytes = encode(params);
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<Parameters<T>, ModelError> {
    let bytes = std::fs::read(path)?;
    decode(&bytes)
}

pub(crate) fn encode<T: Real>(params: &Parameters<T>) -> Vec<u8> {
    let cfg = &params.config;
    let mut out = Vec::with_capacity(4 + 4 + 6 * 4 + 8 + params.len() * 4 + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for field in [cfg.n_layers, cfg.n_heads, cfg.d_model, cfg.d_ffn, cfg.vocab_size, cfg.max_len] {
        out.extend_from_slice(&(field as u32).to_le_bytes());
    }
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    for &p in params.as_flat() {
        out.extend_from_slice(&p.as_f32().to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub(crate) fn decode<T: Real>(bytes: &[u8]) -> Result<Parameters<T>, ModelError> {
    let header_len = 4 + 4 + 6 * 4 + 8;
    if bytes.len() < header_len + 4 {
        return Err(ModelError::BadCheckpoint("file too small".into()));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic bytes".into()));
    }
    let (body, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored_crc = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let actual_crc = crc32fast::hash(body);
    if stored_crc != actual_crc {
        return Err(ModelError::BadCheckpoint(format!(
            "CRC mismatch: stored {stored_crc:#010x}, computed {actual_crc:#010x}"
        )));
    }
    let mut at = 4;
    let mut read_u32 = || -> u32 {
        let v = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        at += 4;
        v
    };
    let version = read_u32();
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let n_layers = read_u32() as usize;
    let n_heads = read_u32() as usize;
    let d_model = read_u32() as usize;
    let d_ffn = read_u32() as usize;
    let vocab_size = read_u32() as usize;
    let max_len = read_u32() as usize;
    let seed = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
    at += 8;
    let config = ModelConfig { n_layers, n_heads, d_model, d_ffn, vocab_size, max_len, seed };
    config.validate().map_err(|e| ModelError::BadCheckpoint(format!("config: {e}")))?;

    let total = Layout::of(&config).total;
    let param_bytes = &body[at..];
    if param_bytes.len() != total * 4 {
        return Err(ModelError::BadCheckpoint(format!(
            "parameter section is {} bytes, layout needs {}",
            param_bytes.len(),
            total * 4
        )));
    }
    let mut data = Vec::with_capacity(total);
    for chunk in param_bytes.chunks_exact(4) {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(ModelError::BadCheckpoint("non-finite parameter".into()));
        }
        data.push(T::from_f32(v));
    }
    Ok(Parameters { config, data })
}
