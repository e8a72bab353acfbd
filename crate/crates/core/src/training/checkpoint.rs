//! Binary parameter files.
//!
//! ```text
//! "RMST" | version u32 | count u32 |
//!   count x ( name_len u32 | name utf-8 | rank u32 | rank x dim u32 | f32 data )
//! | crc32 u32
//! ```
//!
//! Integers and floats are little-endian; the CRC covers every preceding byte.

use std::path::Path;

use crate::error::{CheckpointError, Result};
use crate::networks::{ModelConfig, RemasterModel};
use crate::tensor::{Dims5, ParamStore, Tensor5};

pub const MAGIC: &[u8; 4] = b"RMST";
pub const VERSION: u32 = 1;

pub fn to_bytes(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, p) in store.iter() {
        out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
        out.extend_from_slice(p.name.as_bytes());
        let dims = p.tensor.dims().as_array();
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in p.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or(CheckpointError::Truncated { what })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }
}

/// Parses a checkpoint into `(name, tensor)` pairs in file order.
pub fn from_bytes(bytes: &[u8]) -> Result<Vec<(String, Tensor5)>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(CheckpointError::Truncated { what: "header" });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let count = r.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| CheckpointError::BadName)?
            .to_string();
        let rank = r.u32("rank")? as usize;
        let mut dims = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            dims.push(r.u32("dims")? as usize);
        }
        let Some(d) = Dims5::from_slice(&dims) else {
            return Err(CheckpointError::Malformed {
                name,
                reason: format!("rank {rank}, expected 5"),
            });
        };
        let raw = r.take(d.numel() * 4, "tensor data")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let tensor = Tensor5::new(d, data).map_err(|e| CheckpointError::Malformed {
            name: name.clone(),
            reason: e.to_string(),
        })?;
        out.push((name, tensor));
    }
    if r.pos != body.len() {
        return Err(CheckpointError::Malformed {
            name: out.last().map(|(n, _)| n.clone()).unwrap_or_default(),
            reason: format!("{} trailing bytes", body.len() - r.pos),
        });
    }
    Ok(out)
}

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, to_bytes(store))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor5)>> {
    let bytes = std::fs::read(path)?;
    Ok(from_bytes(&bytes)?)
}

/// Width divisor implied by the first restoration layer (64 filters at full
/// width).
pub fn infer_config(tensors: &[(String, Tensor5)]) -> Result<ModelConfig> {
    let first = tensors
        .iter()
        .find(|(n, _)| n == "pre.01.weight")
        .ok_or_else(|| CheckpointError::Missing("pre.01.weight".into()))?;
    let out = first.1.dims().b;
    if out == 0 || 64 % out != 0 {
        return Err(CheckpointError::Malformed {
            name: first.0.clone(),
            reason: format!("{out} filters do not correspond to any model width"),
        }
        .into());
    }
    Ok(ModelConfig::default().with_width_divisor(64 / out))
}

/// Rebuilds a model from a checkpoint file.
pub fn load_model(path: &Path) -> Result<RemasterModel> {
    let tensors = load(path)?;
    let mut model = RemasterModel::new(infer_config(&tensors)?)?;
    model.params.load_values(&tensors)?;
    Ok(model)
}

/// Loads `path` into an existing model, failing on any name or shape
/// mismatch.
pub fn load_into(model: &mut RemasterModel, path: &Path) -> Result<()> {
    let tensors = load(path)?;
    model.params.load_values(&tensors)
}
