//! NTSR named-tensor container.
//!
//! ```text
//! "NTSR" | u8 version=1 | u32 count
//! per entry: u32 name_len | name (UTF-8) | u8 rank | rank × u32 dims | Π dims × f32
//! ```
//! All integers and floats are little-endian.

use std::fs;
use std::path::Path;

use thiserror::Error;

use super::Tensor;

pub const NTSR_MAGIC: &[u8; 4] = b"NTSR";
pub const NTSR_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum NtsrError {
    #[error("not an NTSR container (magic bytes {0:?})")]
    BadMagic([u8; 4]),
    #[error("unsupported NTSR version {0}")]
    UnsupportedVersion(u8),
    #[error("NTSR container truncated while reading {0}")]
    Truncated(&'static str),
    #[error("entry name is not valid UTF-8")]
    InvalidName,
    #[error("entry `{0}` has an invalid shape")]
    InvalidShape(String),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

pub fn write_ntsr(entries: &[(&str, &Tensor<f32>)]) -> Vec<u8> {
    let payload: usize = entries.iter().map(|(n, t)| 9 + n.len() + 4 * t.rank() + 4 * t.len()).sum();
    let mut buf = Vec::with_capacity(9 + payload);
    buf.extend_from_slice(NTSR_MAGIC);
    buf.push(NTSR_VERSION);
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, t) in entries {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.rank() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], NtsrError> {
        let end = self.pos.checked_add(n).ok_or(NtsrError::Truncated(what))?;
        let s = self.buf.get(self.pos..end).ok_or(NtsrError::Truncated(what))?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, NtsrError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, NtsrError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn read_ntsr(bytes: &[u8]) -> Result<Vec<(String, Tensor<f32>)>, NtsrError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic = r.take(4, "magic").map_err(|_| {
        let mut m = [0u8; 4];
        m[..bytes.len().min(4)].copy_from_slice(&bytes[..bytes.len().min(4)]);
        NtsrError::BadMagic(m)
    })?;
    if magic != NTSR_MAGIC {
        return Err(NtsrError::BadMagic([magic[0], magic[1], magic[2], magic[3]]));
    }
    let version = r.u8("version")?;
    if version != NTSR_VERSION {
        return Err(NtsrError::UnsupportedVersion(version));
    }
    let count = r.u32("entry count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| NtsrError::InvalidName)?
            .to_owned();
        let rank = r.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dims")? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| NtsrError::InvalidShape(name.clone()))?;
        let raw = r.take(n.checked_mul(4).ok_or(NtsrError::Truncated("values"))?, "values")?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(shape, data).map_err(|_| NtsrError::InvalidShape(name.clone()))?;
        out.push((name, t));
    }
    if r.pos != bytes.len() {
        return Err(NtsrError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(out)
}

pub fn write_ntsr_file(path: &Path, entries: &[(&str, &Tensor<f32>)]) -> Result<(), NtsrError> {
    fs::write(path, write_ntsr(entries))
        .map_err(|source| NtsrError::Io { path: path.display().to_string(), source })
}

pub fn read_ntsr_file(path: &Path) -> Result<Vec<(String, Tensor<f32>)>, NtsrError> {
    let bytes =
        fs::read(path).map_err(|source| NtsrError::Io { path: path.display().to_string(), source })?;
    read_ntsr(&bytes)
}
