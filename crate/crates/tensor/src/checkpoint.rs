//! `SSFW` parameter files.
//!
//! Layout (little-endian): magic `SSFW`, `u32` version, then until EOF one
//! record per parameter: `u32` name length, UTF-8 name, `u8` dtype tag,
//! `u32` rank, `rank x u64` extents, raw scalars.

use std::fs;
use std::path::Path;

use crate::element::{DType, Element};
use crate::error::{Result, TensorError};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SSFW";
pub const VERSION: u32 = 1;

/// One named parameter as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Raw little-endian scalar bytes.
    pub bytes: Vec<u8>,
}

impl Record {
    pub fn from_tensor<T: Element>(name: &str, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data().iter() {
            v.write_le(&mut bytes);
        }
        Record {
            name: name.to_owned(),
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    pub fn values<T: Element>(&self) -> Result<Vec<T>> {
        if self.dtype != T::DTYPE {
            return Err(TensorError::Contract(format!(
                "parameter {} stored as {:?}, requested {:?}",
                self.name,
                self.dtype,
                T::DTYPE
            )));
        }
        Ok(self.bytes.chunks_exact(T::DTYPE.size()).map(T::read_le).collect())
    }
}

pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.push(r.dtype as u8);
        out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
        for &d in &r.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&r.bytes);
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(TensorError::Format {
                offset: self.pos as u64,
                msg: format!("truncated while reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8, what)?);
        Ok(u64::from_le_bytes(a))
    }
}

pub fn decode(buf: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { buf, pos: 0 };
    if c.take(4, "magic")? != MAGIC {
        return Err(TensorError::Format {
            offset: 0,
            msg: "bad magic, expected SSFW".into(),
        });
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(TensorError::Format {
            offset: 4,
            msg: format!("unsupported version {version}"),
        });
    }
    let mut records = Vec::new();
    while c.pos < buf.len() {
        let name_len = c.u32("name length")? as usize;
        let at = c.pos;
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| TensorError::Format {
                offset: at as u64,
                msg: "parameter name is not UTF-8".into(),
            })?
            .to_owned();
        let at = c.pos;
        let dtype = DType::from_tag(c.take(1, "dtype")?[0]).ok_or_else(|| TensorError::Format {
            offset: at as u64,
            msg: "unknown dtype tag".into(),
        })?;
        let rank = c.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        for _ in 0..rank {
            shape.push(c.u64("extent")? as usize);
        }
        let n: usize = shape.iter().product();
        let bytes = c.take(n * dtype.size(), "scalars")?.to_vec();
        records.push(Record {
            name,
            dtype,
            shape,
            bytes,
        });
    }
    Ok(records)
}

pub fn save(path: &Path, records: &[Record]) -> Result<()> {
    fs::write(path, encode(records))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Vec<Record>> {
    decode(&fs::read(path)?)
}
