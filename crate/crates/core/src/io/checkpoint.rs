//! F4DW parameter checkpoints.
//!
//! Layout (little-endian): magic `F4DW`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u8` dtype (0 = f32),
//! `u32` rank and `u32` extents; then each entry's `f32` data in the same
//! order.

use std::path::Path;

use crate::error::{Error, Result};
use crate::net::{ParamSet, Tensor};

pub const MAGIC: &[u8; 4] = b"F4DW";
pub const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Values are stored as `f32`; parameters kept on the `f32` grid survive
/// a round trip bit for bit.
pub fn encode_params(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        let bytes = name.as_bytes();
        let len = u32::try_from(bytes.len()).map_err(|_| Error::InvalidArgument("parameter name too long".into()))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(bytes);
        out.push(DTYPE_F32);
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
    }
    for (_, t) in params.iter() {
        for &v in t.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::format(self.path, "truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn decode_params(bytes: &[u8], path: &Path) -> Result<ParamSet> {
    let mut r = Reader { bytes, pos: 0, path };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "bad magic, expected F4DW"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format(path, "parameter name is not UTF-8"))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != DTYPE_F32 {
            return Err(Error::format(path, format!("unsupported dtype {dtype} for {name}")));
        }
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        entries.push((name, shape));
    }
    let mut params = ParamSet::new();
    for (name, shape) in entries {
        let n: usize = shape.iter().product();
        let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::format(path, "entry too large"))?)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params
            .insert(&name, Tensor::new(shape, data)?)
            .map_err(|e| Error::format(path, e.to_string()))?;
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint data"));
    }
    Ok(params)
}

pub fn save_params(path: &Path, params: &ParamSet) -> Result<()> {
    std::fs::write(path, encode_params(params)?).map_err(|e| Error::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamSet> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_params(&bytes, path)
}
