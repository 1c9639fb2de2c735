//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   "WAVDANN1"
//! version  u32       1
//! digest   u64       FNV-1a of the model config's canonical text
//! count    u32       number of parameter blocks
//! blocks   repeated:
//!   name_len u32, name (UTF-8)
//!   rank u32, dims u64 × rank
//!   data f64 × product(dims)
//! ```
//!
//! Blocks appear in parameter-store order, so a checkpoint is byte-stable
//! for a given model state.

use std::fs;
use std::path::Path;

use super::{ModelConfig, ModelError, ParamStore};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"WAVDANN1";
pub const VERSION: u32 = 1;

pub fn save(path: &Path, params: &ParamStore, config_digest: u64) -> Result<(), ModelError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&config_digest.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&t.le_bytes());
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        if self.pos + n > self.bytes.len() {
            return Err(ModelError::BadCheckpoint(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.bytes.len()
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Loads a checkpoint, returning the parameters and the stored config
/// digest. Verification against a concrete config is the caller's job
/// (see [`load_for_config`]).
pub fn load(path: &Path) -> Result<(ParamStore, u64), ModelError> {
    let bytes = fs::read(path)?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(ModelError::BadCheckpoint("bad magic; not a checkpoint file".to_string()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(ModelError::BadCheckpoint(format!("unsupported version {version}")));
    }
    let digest = r.u64()?;
    let count = r.u32()? as usize;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| ModelError::BadCheckpoint("parameter name is not UTF-8".to_string()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if params.get(&name).is_some() {
            return Err(ModelError::BadCheckpoint(format!("duplicate parameter {name}")));
        }
        params.insert(&name, Tensor::from_vec(&shape, data));
    }
    if r.pos != bytes.len() {
        return Err(ModelError::BadCheckpoint(format!(
            "{} trailing bytes after last block",
            bytes.len() - r.pos
        )));
    }
    Ok((params, digest))
}

/// Loads a checkpoint and verifies it was written for this config.
pub fn load_for_config(path: &Path, config: &ModelConfig) -> Result<ParamStore, ModelError> {
    let (params, digest) = load(path)?;
    let expected = config.digest();
    if digest != expected {
        return Err(ModelError::BadCheckpoint(format!(
            "config digest mismatch: checkpoint {digest:#018x}, config {expected:#018x}"
        )));
    }
    Ok(params)
}
