//! Binary parameter checkpoints.
//!
//! Layout (little-endian): 8-byte magic `SKMOTPRM`, `u32` version, `u32`
//! tensor count, then `(rows: u32, cols: u32)` per tensor, then every value
//! as raw `f64` bits, tensors in canonical order (f_edge weight, f_edge
//! bias, GCN W_1..W_K, phi weight, phi bias, f_affinity weight, f_affinity
//! bias).

use std::path::Path;

use sinkmot_core::params::{ModelConfig, Parameters, ParamsError};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"SKMOTPRM";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{}: {source}", path.display())]
    Io { path: std::path::PathBuf, source: std::io::Error },
    #[error("not a parameter checkpoint")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Params(#[from] ParamsError),
}

pub fn encode(params: &Parameters) -> Vec<u8> {
    let shapes = params.shapes();
    let mut out = Vec::with_capacity(16 + 8 * shapes.len() + 8 * params.num_values());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (r, c) in shapes {
        out.extend_from_slice(&(r as u32).to_le_bytes());
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    for t in params.tensors() {
        for v in t {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::ShapeMismatch(format!("file truncated while reading {what}")));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

/// Decodes a checkpoint and checks its shapes against `config`.
pub fn decode(bytes: &[u8], config: &ModelConfig) -> Result<Parameters, CheckpointError> {
    config.validate()?;
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.pos = MAGIC.len();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32("tensor count")? as usize;
    let expected = config.tensor_shapes();
    if count != expected.len() {
        return Err(CheckpointError::ShapeMismatch(format!("{count} tensors stored, model needs {}", expected.len())));
    }
    for (k, want) in expected.iter().enumerate() {
        let got = (r.u32("shape table")? as usize, r.u32("shape table")? as usize);
        if got != *want {
            return Err(CheckpointError::ShapeMismatch(format!("tensor {k} stored as {got:?}, model needs {want:?}")));
        }
    }
    let mut params = Parameters::zeros(config);
    for t in params.tensors_mut() {
        for v in t.iter_mut() {
            *v = f64::from_le_bytes(r.take(8, "values")?.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::ShapeMismatch(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(params)
}

/// Reads the shape table alone and infers the model dimensions.
pub fn peek_config(bytes: &[u8]) -> Result<ModelConfig, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    r.pos = MAGIC.len();
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let count = r.u32("tensor count")? as usize;
    if count < 7 {
        return Err(CheckpointError::ShapeMismatch(format!("{count} tensors is too few")));
    }
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        shapes.push((r.u32("shape table")? as usize, r.u32("shape table")? as usize));
    }
    let layers = count - 6;
    let config = ModelConfig { d_app: shapes[2].0, d_inter: shapes[1 + layers].1, layers };
    config.validate()?;
    Ok(config)
}

pub fn save_params(params: &Parameters, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(params)).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })
}

pub fn load_params(path: &Path, config: &ModelConfig) -> Result<Parameters, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes, config)
}

/// Loads a checkpoint whose dimensions come from its own shape table.
pub fn load_params_any(path: &Path) -> Result<Parameters, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.to_path_buf(), source })?;
    decode(&bytes, &peek_config(&bytes)?)
}
