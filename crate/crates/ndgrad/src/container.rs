//! Binary parameter container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        8 bytes   "NDGRADCK"
//! version      u32       SCHEMA_VERSION
//! meta_len     u32
//! meta         meta_len bytes, UTF-8 (opaque to this crate)
//! count        u32       number of parameters
//! count times, in ascending name order:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   trainable  u8        0 or 1
//!   rank       u32
//!   dims       rank x u64
//!   values     prod(dims) x f64
//! ```
//!
//! Writing is canonical: the same store and metadata always produce the same
//! bytes.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NDGRADCK";
pub const SCHEMA_VERSION: u32 = 1;

pub fn encode(meta: &str, params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&SCHEMA_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, p) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(u8::from(p.trainable));
        out.extend_from_slice(&(p.value.rank() as u32).to_le_bytes());
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| {
            Error::Container(format!(
                "truncated file: need {n} bytes for {what} at offset {}, {} available",
                self.pos,
                self.buf.len() - self.pos
            ))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn string(&mut self, len: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(len, what)?.to_vec())
            .map_err(|_| Error::Container(format!("{what} is not valid UTF-8")))
    }
}

/// Parses a container, returning its metadata string and parameters.
pub fn decode(bytes: &[u8]) -> Result<(String, ParamStore)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Container(
            "bad magic; not a parameter container".into(),
        ));
    }
    let version = r.u32("version")?;
    if version != SCHEMA_VERSION {
        return Err(Error::Container(format!(
            "schema version {version} is not supported (expected {SCHEMA_VERSION})"
        )));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta = r.string(meta_len, "metadata")?;
    let count = r.u32("parameter count")?;
    let mut params = ParamStore::new();
    for _ in 0..count {
        let name_len = r.u32("name length")? as usize;
        let name = r.string(name_len, "parameter name")?;
        let trainable = match r.take(1, "trainable flag")?[0] {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Container(format!(
                    "parameter `{name}`: invalid trainable flag {other}"
                )))
            }
        };
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64("dimension")? as usize);
        }
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Container(format!("parameter `{name}`: shape overflow")))?;
        let raw = r.take(
            numel
                .checked_mul(8)
                .ok_or_else(|| Error::Container("payload overflow".into()))?,
            "parameter payload",
        )?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        params.insert(name, Tensor::new(shape, data)?, trainable);
    }
    if r.pos != bytes.len() {
        return Err(Error::Container(format!(
            "{} trailing bytes after last parameter",
            bytes.len() - r.pos
        )));
    }
    Ok((meta, params))
}
