//! Checkpoint container: a flat list of named, shaped f64 arrays.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic   8  b"FHDRCKPT"
//! version u32 (currently 1)
//! count   u32
//! then per record:
//!   name_len u32, name bytes (UTF-8),
//!   shape    4 x u32 (batch, channel, height, width),
//!   data     numel x f64 LE
//! ```
//!
//! The layout is stable: readers must reject unknown versions rather than
//! guess. Writes go through a temp file plus rename, so an aborted run
//! never leaves a partial checkpoint behind.

use std::fs;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"FHDRCKPT";
const VERSION: u32 = 1;

fn encode(params: &ModelParams) -> Vec<u8> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, tensor) in params.iter() {
        bytes.extend_from_slice(&(name.len() as u32).to_le_bytes());
        bytes.extend_from_slice(name.as_bytes());
        let s = tensor.shape();
        for extent in [s.batch, s.channels, s.height, s.width] {
            bytes.extend_from_slice(&(extent as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    bytes
}

pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    write_atomic(path, &encode(params))
}

/// Reads the raw (name, tensor) records of a checkpoint. Use
/// [`ModelParams::from_records`] to validate them against an architecture.
pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let mut off = 0usize;
    let take = |off: &mut usize, n: usize| -> Result<&[u8]> {
        if *off + n > bytes.len() {
            return Err(Error::parse(path, "truncated checkpoint"));
        }
        let s = &bytes[*off..*off + n];
        *off += n;
        Ok(s)
    };
    if take(&mut off, 8)? != MAGIC {
        return Err(Error::parse(path, "not a checkpoint file"));
    }
    let u32_at = |off: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(off, 4)?.try_into().unwrap()))
    };
    let version = u32_at(&mut off)?;
    if version != VERSION {
        return Err(Error::parse(path, format!("unsupported version {version}")));
    }
    let count = u32_at(&mut off)? as usize;
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = u32_at(&mut off)? as usize;
        let name = String::from_utf8(take(&mut off, name_len)?.to_vec())
            .map_err(|_| Error::parse(path, "parameter name is not UTF-8"))?;
        let mut extents = [0usize; 4];
        for e in &mut extents {
            *e = u32_at(&mut off)? as usize;
        }
        let shape = Shape::new(extents[0], extents[1], extents[2], extents[3]);
        let raw = take(&mut off, 8 * shape.numel())?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        records.push((name, Tensor::new(shape, data)?));
    }
    if off != bytes.len() {
        return Err(Error::parse(path, "trailing bytes after last record"));
    }
    Ok(records)
}

/// SHA-256 over the serialized byte layout, hex-encoded.
pub fn params_digest(params: &ModelParams) -> String {
    let mut hasher = Sha256::new();
    hasher.update(encode(params));
    hex(&hasher.finalize())
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
