//! `.ten` tensor files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"TENS" | version: u16 = 1 | dtype: u8 = 1 (f32) | ndim: u8 | dims: ndim × u64 | data: numel × f32
//! ```

use std::fs;
use std::path::Path;

use psme_core::Tensor;

use crate::IoError;

pub const MAGIC: &[u8; 4] = b"TENS";
pub const VERSION: u16 = 1;
const DTYPE_F32: u8 = 1;

pub fn encode(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.ndim() + 4 * t.numel());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parses a buffer produced by [`encode`]. `path` only labels errors.
pub fn decode(bytes: &[u8], path: &Path) -> Result<Tensor, IoError> {
    if bytes.len() < 8 || &bytes[..4] != MAGIC {
        return Err(IoError::BadMagic(path.to_path_buf()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(IoError::format(path, format!("unsupported version {}", version)));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(IoError::format(path, format!("unsupported dtype {}", bytes[6])));
    }
    let ndim = bytes[7] as usize;
    let header = 8 + 8 * ndim;
    if bytes.len() < header {
        return Err(IoError::format(path, "truncated header"));
    }
    let mut shape = Vec::with_capacity(ndim);
    for i in 0..ndim {
        let at = 8 + 8 * i;
        let d = u64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        shape.push(usize::try_from(d).map_err(|_| IoError::format(path, "dimension overflows usize"))?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| IoError::format(path, "element count overflows"))?;
    if bytes.len() - header != numel.saturating_mul(4) {
        return Err(IoError::format(
            path,
            format!("payload is {} bytes, shape {:?} needs {}", bytes.len() - header, shape, numel * 4),
        ));
    }
    let data = bytes[header..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(&shape, data).map_err(|e| IoError::format(path, e.to_string()))
}

pub fn write(path: &Path, t: &Tensor) -> Result<(), IoError> {
    fs::write(path, encode(t)).map_err(|e| IoError::io(path, e))
}

pub fn read(path: &Path) -> Result<Tensor, IoError> {
    let bytes = fs::read(path).map_err(|e| IoError::io(path, e))?;
    decode(&bytes, path)
}
