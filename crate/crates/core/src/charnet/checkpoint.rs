//! Binary checkpoints, little-endian:
//!
//! ```text
//! "SCCM1"
//! u64   config hash
//! u32   header length, then UTF-8 JSON {"network": .., "meta": ..}
//! u64   step counter
//! u32   tensor count
//! per tensor: u32 name length, name, u32 rank, u64 dims.., f64 values..
//! ```
//!
//! `meta` is opaque to this module; callers use it for the alphabet and
//! window geometry.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{build_network, NetworkConfig, NetworkParams};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 5] = b"SCCM1";

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    meta: serde_json::Value,
}

pub fn encode_checkpoint(params: &NetworkParams, meta: &serde_json::Value) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        network: params.config.clone(),
        meta: meta.clone(),
    })
    .expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(64 + header.len() + 8 * params.parameter_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&params.config_hash().to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&params.step_counter.to_le_bytes());
    out.extend_from_slice(&(params.tensors.len() as u32).to_le_bytes());
    for t in &params.tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::CorruptCheckpoint(format!(
                "truncated at byte {} (wanted {n} more of {})",
                self.pos,
                self.bytes.len()
            ))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(NetworkParams, serde_json::Value)> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::IncompatibleCheckpoint("missing SCCM1 magic".into()));
    }
    let mut r = Reader {
        bytes,
        pos: MAGIC.len(),
    };
    let hash = r.u64()?;
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| Error::CorruptCheckpoint(format!("header: {e}")))?;
    if header.network.hash() != hash {
        return Err(Error::CorruptCheckpoint("config hash does not match header".into()));
    }
    let mut params = build_network(&header.network)
        .map_err(|e| Error::IncompatibleCheckpoint(e.to_string()))?;
    params.step_counter = r.u64()?;
    let count = r.u32()? as usize;
    if count != params.tensors.len() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint has {count} tensors, network has {}",
            params.tensors.len()
        )));
    }
    for t in params.tensors.iter_mut() {
        let name_len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| Error::CorruptCheckpoint("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64()? as usize);
        }
        if name != t.name || shape != t.shape {
            return Err(Error::IncompatibleCheckpoint(format!(
                "tensor {name} {shape:?} does not match {} {:?}",
                t.name, t.shape
            )));
        }
        let raw = r.take(8 * t.data.len())?;
        for (v, chunk) in t.data.iter_mut().zip(raw.chunks_exact(8)) {
            *v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    if params.tensors.iter().any(|t| t.data.iter().any(|v| !v.is_finite())) {
        return Err(Error::CorruptCheckpoint("non-finite tensor value".into()));
    }
    Ok((params, header.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &NetworkParams, meta: &serde_json::Value) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_checkpoint(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkParams, serde_json::Value)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
