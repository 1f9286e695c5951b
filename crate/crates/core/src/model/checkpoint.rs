//! Versioned little-endian checkpoint container.
//!
//! Layout: magic `BIOSENCK`, `u32` version, `u64` length + JSON config,
//! `u32` parameter count, then per parameter `u32` name length, UTF-8 name,
//! `u32` rank, `u64` dims and `f64` values. A SHA-256 digest of all
//! preceding bytes closes the file.

use std::path::Path;

use sha2::{Digest, Sha256};

use super::config::ModelConfig;
use super::network::ModelState;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::layers::ParamStore;

pub const MAGIC: &[u8; 8] = b"BIOSENCK";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

pub fn encode_checkpoint(state: &ModelState) -> Result<Vec<u8>> {
    encode_parts(state.config(), state.params())
}

fn encode_parts(config: &ModelConfig, params: &ParamStore) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(config)
        .map_err(|e| Error::InvalidConfig(format!("config does not serialize: {e}")))?;
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::ParseError(format!("checkpoint truncated at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self, v: u64) -> Result<usize> {
        usize::try_from(v)
            .ok()
            .filter(|&n| n <= self.buf.len())
            .ok_or_else(|| Error::ParseError(format!("length {v} exceeds checkpoint size")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::ParseError("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let n = r.u64()?;
    let n = r.len(n)?;
    let cfg_bytes = r.take(n)?;
    let count = r.u32()?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let n = r.u32()? as u64;
        let n = r.len(n)?;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::CorruptCheckpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            let d = r.u64()?;
            shape.push(r.len(d)?);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|&n| n.saturating_mul(8) <= bytes.len())
            .ok_or_else(|| Error::ParseError(format!("parameter `{name}` larger than the file")))?;
        let data: Vec<f64> = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        entries.push((name, shape, data));
    }
    let body_end = r.pos;
    let digest = r.take(DIGEST_LEN)?;
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after digest",
            bytes.len() - r.pos
        )));
    }
    if Sha256::digest(&bytes[..body_end]).as_slice() != digest {
        return Err(Error::CorruptCheckpoint("digest mismatch".into()));
    }

    let config: ModelConfig = serde_json::from_slice(cfg_bytes)
        .map_err(|e| Error::CorruptCheckpoint(format!("config: {e}")))?;
    let mut params = ParamStore::new();
    for (name, shape, data) in entries {
        let t = Tensor::new(&shape, data).map_err(|e| Error::CorruptCheckpoint(format!("`{name}`: {e}")))?;
        params
            .insert(name, t)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    }
    ModelState::from_parts(config, params).map_err(|e| match e {
        Error::InvalidConfig(m) | Error::InvalidShape(m) => Error::CorruptCheckpoint(m),
        other => other,
    })
}

pub fn save_checkpoint(state: &ModelState, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(state)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelState> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
