//! Checkpoint bytes: a flat, language-agnostic container for named tensors
//! plus a config snapshot.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "RLSD"                      4-byte magic
//! version                     u32 (currently 1)
//! tensor count                u32
//! per tensor:
//!   name length               u16, then that many UTF-8 bytes
//!   rank                      u8
//!   dims                      u32 each
//!   data                      row-major f32, dims product many
//! config length               u32, then that many UTF-8 bytes
//! ```
//!
//! Values are stored as f32 (training runs in f64); a decoded set therefore
//! re-encodes byte-identically, while save∘load rounds each value once.

use crate::params::ParamSet;
use crate::tensor::Tensor;
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"RLSD";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic {found:?}, expected \"RLSD\"")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported checkpoint version {found}, this build reads {VERSION}")]
    BadVersion { found: u32 },
    #[error("truncated: needed {needed} more bytes at offset {offset} for {what}")]
    Truncated { offset: usize, needed: usize, what: &'static str },
    #[error("tensor name at offset {offset} is not UTF-8")]
    BadName { offset: usize },
    #[error("{len} trailing bytes after the config blob")]
    TrailingBytes { len: usize },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn encode(params: &ParamSet, config: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.write_u32::<LittleEndian>(VERSION).unwrap();
    out.write_u32::<LittleEndian>(params.len() as u32).unwrap();
    for (name, tensor) in params.iter() {
        assert!(name.len() <= u16::MAX as usize, "parameter name too long");
        assert!(tensor.rank() <= u8::MAX as usize, "tensor rank too large");
        out.write_u16::<LittleEndian>(name.len() as u16).unwrap();
        out.extend_from_slice(name.as_bytes());
        out.push(tensor.rank() as u8);
        for &d in &tensor.shape {
            out.write_u32::<LittleEndian>(d as u32).unwrap();
        }
        for &v in &tensor.data {
            out.write_f32::<LittleEndian>(v as f32).unwrap();
        }
    }
    out.write_u32::<LittleEndian>(config.len() as u32).unwrap();
    out.extend_from_slice(config.as_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.bytes.len() - self.pos < n {
            return Err(CheckpointError::Truncated {
                offset: self.pos,
                needed: n - (self.bytes.len() - self.pos),
                what,
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(self.take(2, what)?.read_u16::<LittleEndian>().unwrap())
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(self.take(4, what)?.read_u32::<LittleEndian>().unwrap())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamSet, String), CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic.to_vec() });
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion { found: version });
    }
    let count = r.u32("tensor count")?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name_len = r.u16("name length")? as usize;
        let name_off = r.pos;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| CheckpointError::BadName { offset: name_off })?
            .to_string();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut raw = r.take(4 * numel, "tensor data")?;
        let mut data = vec![0.0f64; numel];
        for v in data.iter_mut() {
            *v = raw.read_f32::<LittleEndian>().unwrap() as f64;
        }
        params.insert(name, Tensor::from_vec(shape, data));
    }
    let config_len = r.u32("config length")? as usize;
    let config_off = r.pos;
    let config = std::str::from_utf8(r.take(config_len, "config")?)
        .map_err(|_| CheckpointError::BadName { offset: config_off })?
        .to_string();
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes { len: bytes.len() - r.pos });
    }
    Ok((params, config))
}

pub fn save(path: &Path, params: &ParamSet, config: &str) -> Result<(), CheckpointError> {
    std::fs::write(path, encode(params, config))
        .map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })
}

pub fn load(path: &Path) -> Result<(ParamSet, String), CheckpointError> {
    let bytes = std::fs::read(path)
        .map_err(|e| CheckpointError::Io { path: path.display().to_string(), source: e })?;
    decode(&bytes)
}
