//! Binary checkpoint format.
//!
//! ```text
//! "MRPH"                magic
//! u32                   format version
//! u32 + bytes           JSON descriptor (spec, seed, optimizer state, metadata)
//! u64                   total scalar parameter count N
//! per parameter grid, in canonical order:
//!   f32 x len           values
//!   f32 x len           Adam first moment
//!   f32 x len           Adam second moment
//! u32                   CRC32 of every preceding byte
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec, TrainingMeta};
use crate::error::{Error, Result};
use crate::optim::AdamState;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MRPH";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Descriptor {
    spec: NetworkSpec,
    seed: u64,
    optimizer: AdamState,
    meta: TrainingMeta,
}

pub fn encode_checkpoint(net: &Network) -> Result<Vec<u8>> {
    let desc = Descriptor {
        spec: net.spec.clone(),
        seed: net.seed,
        optimizer: net.optimizer,
        meta: net.meta.clone(),
    };
    let json = serde_json::to_vec(&desc).map_err(|e| Error::Malformed(e.to_string()))?;
    let mut out = Vec::with_capacity(32 + json.len() + 12 * net.count_parameters());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(net.count_parameters() as u64).to_le_bytes());
    for p in net.params() {
        for grid in [&p.value, &p.m, &p.v] {
            for v in grid.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Malformed("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, dst: &mut [f32]) -> Result<()> {
        let raw = self.take(4 * dst.len())?;
        for (d, c) in dst.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(c.try_into().unwrap());
        }
        Ok(())
    }
}

/// Decodes a checkpoint. Checks run magic, then CRC, then version, so a
/// truncated file reports a checksum failure.
pub fn decode_checkpoint(bytes: &[u8]) -> Result<Network> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(Error::Checksum { stored: 0, computed: crc32fast::hash(bytes) });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut r = Reader { buf: body, pos: 4 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let desc_len = r.u32()? as usize;
    let desc: Descriptor =
        serde_json::from_slice(r.take(desc_len)?).map_err(|e| Error::Malformed(format!("descriptor: {e}")))?;
    let mut net = Network::build(desc.spec, desc.seed)?;
    desc.optimizer.config.validate()?;
    net.optimizer = desc.optimizer;
    net.meta = desc.meta;

    let count = r.u64()?;
    if count != net.count_parameters() as u64 {
        return Err(Error::Malformed(format!(
            "parameter count {count} does not match spec ({})",
            net.count_parameters()
        )));
    }
    for p in net.params_mut() {
        r.f32s(&mut p.value)?;
        r.f32s(&mut p.m)?;
        r.f32s(&mut p.v)?;
    }
    if r.pos != body.len() {
        return Err(Error::Malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(net)
}

pub fn save(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(net)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
