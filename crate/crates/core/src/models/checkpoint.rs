//! Checkpoint files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset      | size  | content                                  |
//! |-------------|-------|------------------------------------------|
//! | 0           | 8     | magic `DRMLCKPT`                         |
//! | 8           | 4     | u32 format version (currently 1)         |
//! | 12          | 4     | u32 descriptor length `D`                |
//! | 16          | D     | UTF-8 JSON of the [`ModelSpec`]          |
//! | 16+D        | 8     | u64 seed                                 |
//! | 24+D        | 8     | u64 iteration                            |
//! | 32+D        | 8     | u64 parameter count `N`                  |
//! | 40+D        | 8·N   | f64 parameters                           |
//!
//! Next to `name.bin` a `name.json` sidecar holds the same header fields plus
//! free-form run metadata.

use std::fs;
use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::diffcore::ParamVector;

use super::{ModelError, ModelSpec};

pub const MAGIC: &[u8; 8] = b"DRMLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: ModelSpec,
    pub seed: u64,
    pub iteration: u64,
    pub params: ParamVector,
    pub metadata: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    model: ModelSpec,
    seed: u64,
    iteration: u64,
    param_count: usize,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn sidecar_path(bin: &Path) -> PathBuf {
    bin.with_extension("json")
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let descriptor = serde_json::to_vec(&self.model).expect("model spec serializes");
        let mut out = Vec::with_capacity(40 + descriptor.len() + 8 * self.params.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(descriptor.len() as u32).to_le_bytes());
        out.extend_from_slice(&descriptor);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.iteration.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for v in self.params.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| corrupt("truncated header"))?;
        if &magic != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let dlen = read_u32(&mut r)? as usize;
        if r.len() < dlen {
            return Err(corrupt("truncated descriptor"));
        }
        let model: ModelSpec =
            serde_json::from_slice(&r[..dlen]).map_err(|e| corrupt(format!("descriptor: {e}")))?;
        r = &r[dlen..];
        let seed = read_u64(&mut r)?;
        let iteration = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        if r.len() != 8 * n {
            return Err(corrupt(format!("expected {} parameter bytes, found {}", 8 * n, r.len())));
        }
        let values: Vec<f64> = r.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        model.validate()?;
        if n != model.param_count() {
            return Err(ModelError::ParamCount { expected: model.param_count(), got: n });
        }
        let params = ParamVector::new(Arc::new(model.layout()), values)?;
        Ok(Self { model, seed, iteration, params, metadata: serde_json::Value::Null })
    }

    /// Writes `path` and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.flush()?;
        let sidecar = Sidecar {
            format_version: FORMAT_VERSION,
            model: self.model.clone(),
            seed: self.seed,
            iteration: self.iteration,
            param_count: self.params.len(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
        fs::write(sidecar_path(path), json)?;
        Ok(())
    }

    /// Reads `path`; metadata comes from the sidecar when present.
    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = fs::read(path)?;
        let mut ck = Self::from_bytes(&bytes)?;
        match fs::read_to_string(sidecar_path(path)) {
            Ok(s) => {
                let side: Sidecar = serde_json::from_str(&s).map_err(|e| corrupt(format!("sidecar: {e}")))?;
                if side.model != ck.model || side.param_count != ck.params.len() {
                    return Err(corrupt("sidecar disagrees with binary header"));
                }
                ck.metadata = side.metadata;
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => {}
            Err(e) => return Err(e.into()),
        }
        Ok(ck)
    }
}

fn read_u32(r: &mut &[u8]) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut &[u8]) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(|_| corrupt("truncated header"))?;
    Ok(u64::from_le_bytes(b))
}
