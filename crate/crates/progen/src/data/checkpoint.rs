//! Binary checkpoint format.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "PGEN"                      4-byte magic
//! u32  version                currently 1
//! u64  config length          followed by that many bytes of config JSON
//! u64  parameter count
//! per parameter:
//!   u64 name length, name bytes (UTF-8)
//!   u64 ndim, u64 per dimension
//!   f64 per element, row-major
//! 32-byte SHA-256 over everything above
//! ```
//!
//! f64 payloads are written bit-for-bit, so save/load round-trips are exact.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::DataError;

const MAGIC: &[u8; 4] = b"PGEN";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub params: BTreeMap<String, (Vec<usize>, Vec<f64>)>,
}

pub fn save_checkpoint(
    path: &Path,
    config: &serde_json::Value,
    params: &BTreeMap<String, (Vec<usize>, Vec<f64>)>,
) -> Result<(), DataError> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config_bytes = serde_json::to_vec(config).map_err(|e| DataError::Json {
        path: path.into(),
        detail: e.to_string(),
    })?;
    out.extend_from_slice(&(config_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&config_bytes);
    out.extend_from_slice(&(params.len() as u64).to_le_bytes());
    for (name, (shape, data)) in params {
        out.extend_from_slice(&(name.len() as u64).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    std::fs::write(path, out).map_err(|e| DataError::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = std::fs::read(path).map_err(|e| DataError::io(path, e))?;
    let corrupt = |detail: &str| DataError::Corrupt {
        path: path.into(),
        detail: detail.into(),
    };
    if bytes.len() < 4 || &bytes[0..4] != MAGIC {
        return Err(DataError::BadMagic { path: path.into() });
    }
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(corrupt("file shorter than header plus checksum"));
    }
    let body = &bytes[..bytes.len() - CHECKSUM_LEN];
    let stored = &bytes[bytes.len() - CHECKSUM_LEN..];
    let digest = Sha256::digest(body);
    if stored != digest.as_slice() {
        return Err(corrupt("checksum mismatch"));
    }
    let mut cur = Cursor {
        bytes: body,
        pos: 4,
    };
    let version = cur.u32().ok_or_else(|| corrupt("missing version"))?;
    if version != VERSION {
        return Err(DataError::UnsupportedVersion {
            path: path.into(),
            found: version,
            supported: VERSION,
        });
    }
    let config_len = cur.u64().ok_or_else(|| corrupt("missing config length"))? as usize;
    let config_bytes = cur.take(config_len).ok_or_else(|| corrupt("truncated config"))?;
    let config: serde_json::Value =
        serde_json::from_slice(config_bytes).map_err(|e| DataError::Corrupt {
            path: path.into(),
            detail: format!("config JSON: {e}"),
        })?;
    let n_params = cur.u64().ok_or_else(|| corrupt("missing parameter count"))? as usize;
    let mut params = BTreeMap::new();
    for _ in 0..n_params {
        let name_len = cur.u64().ok_or_else(|| corrupt("truncated name length"))? as usize;
        let name_bytes = cur.take(name_len).ok_or_else(|| corrupt("truncated name"))?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| corrupt("parameter name is not UTF-8"))?
            .to_string();
        let ndim = cur.u64().ok_or_else(|| corrupt("truncated ndim"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64().ok_or_else(|| corrupt("truncated shape"))? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur
            .take(numel * 8)
            .ok_or_else(|| corrupt("truncated parameter data"))?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, (shape, data));
    }
    if cur.pos != body.len() {
        return Err(corrupt("trailing bytes after last parameter"));
    }
    Ok(Checkpoint { config, params })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.pos + n <= self.bytes.len() {
            let s = &self.bytes[self.pos..self.pos + n];
            self.pos += n;
            Some(s)
        } else {
            None
        }
    }

    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}
