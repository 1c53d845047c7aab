//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "SDSATCKP"
//! version    u32      1
//! config     u32 x 6  vocab_size n_adaptive n_layers n_heads d_model max_seq
//!            u64      seed
//! count      u64      number of f32 parameters
//! params     f32 x count, declaration order
//! checksum   u64      FNV-1a of every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{Fnv64, ModelConfig, ModelParams};
use crate::error::CheckpointError;

pub const MAGIC: &[u8; 8] = b"SDSATCKP";
pub const VERSION: u32 = 1;

pub fn to_bytes(params: &ModelParams) -> Vec<u8> {
    let cfg = params.config();
    let mut buf = Vec::with_capacity(64 + params.num_params() * 4);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for v in [
        cfg.vocab_size,
        cfg.n_adaptive,
        cfg.n_layers,
        cfg.n_heads,
        cfg.d_model,
        cfg.max_seq,
    ] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    buf.extend_from_slice(&cfg.seed.to_le_bytes());
    buf.extend_from_slice(&(params.num_params() as u64).to_le_bytes());
    for p in params.data() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    let mut h = Fnv64::new();
    h.write(&buf);
    buf.extend_from_slice(&h.finish().to_le_bytes());
    buf
}

struct Cursor<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let s = self
            .buf
            .get(self.at..self.at + n)
            .ok_or(CheckpointError::Truncated)?;
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn from_bytes(buf: &[u8]) -> Result<ModelParams, CheckpointError> {
    if buf.len() < MAGIC.len() || &buf[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::Magic);
    }
    if buf.len() < MAGIC.len() + 12 {
        return Err(CheckpointError::Truncated);
    }
    let (body, trailer) = buf.split_at(buf.len() - 8);
    let mut cur = Cursor { buf: body, at: 8 };
    let version = cur.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    let stored = u64::from_le_bytes(trailer.try_into().unwrap());
    let mut h = Fnv64::new();
    h.write(body);
    if h.finish() != stored {
        return Err(CheckpointError::Checksum {
            stored,
            computed: h.finish(),
        });
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = cur.u32()? as usize;
    }
    let config = ModelConfig {
        vocab_size: dims[0],
        n_adaptive: dims[1],
        n_layers: dims[2],
        n_heads: dims[3],
        d_model: dims[4],
        max_seq: dims[5],
        seed: cur.u64()?,
    };
    let count = cur.u64()? as usize;
    let raw = cur.take(count.checked_mul(4).ok_or(CheckpointError::Truncated)?)?;
    if cur.at != body.len() {
        return Err(CheckpointError::Truncated);
    }
    let data = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    Ok(ModelParams::from_parts(config, data)?)
}

pub fn save(params: &ModelParams, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&to_bytes(params))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelParams, CheckpointError> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    from_bytes(&buf)
}
