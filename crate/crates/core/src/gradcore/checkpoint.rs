//! Parameter checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "COPI1"                      5-byte magic
//! u32 parameter count
//! per parameter:
//!   u32 name length, name bytes (UTF-8)
//!   u32 rank, rank x u64 extents
//!   numel x f64 values
//! u64 footer = number of bytes before the footer
//! ```

use std::fs;
use std::path::Path;

use super::params::ParameterStore;
use super::tensor::{numel, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"COPI1";

pub fn encode_checkpoint(params: &ParameterStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + params.num_scalars() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let len = out.len() as u64;
    out.extend_from_slice(&len.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn corrupt(&self, reason: impl Into<String>) -> Error {
        Error::Corrupt {
            path: self.path.to_path_buf(),
            offset: self.pos as u64,
            reason: reason.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.corrupt(format!("truncated: wanted {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<ParameterStore> {
    let corrupt = |offset: usize, reason: &str| Error::Corrupt {
        path: path.to_path_buf(),
        offset: offset as u64,
        reason: reason.to_string(),
    };
    if bytes.len() < CHECKPOINT_MAGIC.len() + 12 {
        return Err(corrupt(0, "file too short"));
    }
    let body_len = bytes.len() - 8;
    let footer = u64::from_le_bytes(bytes[body_len..].try_into().unwrap());
    if footer != body_len as u64 {
        return Err(corrupt(body_len, &format!("footer says {footer} bytes, found {body_len}")));
    }
    let mut r = Reader {
        bytes: &bytes[..body_len],
        pos: 0,
        path,
    };
    if r.take(5)? != CHECKPOINT_MAGIC {
        return Err(corrupt(0, "bad magic"));
    }
    let count = r.u32()?;
    let mut store = ParameterStore::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| r.corrupt("parameter name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        if rank > 8 {
            return Err(r.corrupt(format!("implausible rank {rank}")));
        }
        let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = numel(&shape);
        if n.checked_mul(8).is_none_or(|b| b > body_len) {
            return Err(r.corrupt(format!("implausible shape {shape:?}")));
        }
        let raw = r.take(n * 8)?;
        let values = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        let at = r.pos;
        let t = Tensor::new(shape, values).map_err(|e| corrupt(at, &e.to_string()))?;
        store.add(name, t).map_err(|e| corrupt(at, &e.to_string()))?;
    }
    if r.pos != body_len {
        return Err(r.corrupt("trailing bytes before footer"));
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParameterStore, path: &Path) -> Result<()> {
    crate::rpmgen::write_atomic(path, &encode_checkpoint(params))
}

pub fn load_checkpoint(path: &Path) -> Result<ParameterStore> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, path)
}

/// Loads `path` into an existing store, requiring identical names and shapes.
pub fn load_checkpoint_into(params: &mut ParameterStore, path: &Path) -> Result<()> {
    let loaded = load_checkpoint(path)?;
    params
        .copy_values_from(&loaded)
        .map_err(|e| Error::Config(format!("{}: checkpoint does not fit the model: {e}", path.display())))
}
