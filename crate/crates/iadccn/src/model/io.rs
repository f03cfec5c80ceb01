//! Named-tensor weight files.
//!
//! Layout: magic "IAWT", u32 version, u32 tensor count; then per tensor:
//! u16 name length, UTF-8 name, u8 ndim, u32 dims[], f32 little-endian
//! data. Values are stored as f32 regardless of the in-memory element type.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

use super::{IADCCNConfig, ModelParams};

const WEIGHT_MAGIC: &[u8; 4] = b"IAWT";
pub const WEIGHT_FORMAT_VERSION: u32 = 1;

pub fn save_params<T: Element>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(WEIGHT_MAGIC);
    out.extend_from_slice(&WEIGHT_FORMAT_VERSION.to_le_bytes());
    let count = params.iter().count() as u32;
    out.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Data(format!("tensor name too long: {name}")));
        }
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(tensor.shape().len() as u8);
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            let f = v.to_f32().expect("element convertible to f32");
            out.extend_from_slice(&f.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: String,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Parse(format!(
                "{}: truncated weight file at byte {}",
                self.path, self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Loads a weight file and validates its tensor inventory against `config`;
/// missing or unexpected tensors are named in the error.
pub fn load_params<T: Element>(path: &Path, config: &IADCCNConfig) -> Result<ModelParams<T>> {
    let bytes = fs::read(path)?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: path.display().to_string(),
    };
    if r.take(4)? != WEIGHT_MAGIC {
        return Err(Error::Parse(format!(
            "{}: bad magic, expected IAWT",
            path.display()
        )));
    }
    let version = r.u32()?;
    if version != WEIGHT_FORMAT_VERSION {
        return Err(Error::Parse(format!(
            "{}: unsupported weight format version {version}",
            path.display()
        )));
    }
    let count = r.u32()?;
    let mut pairs = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?)
            .map_err(|_| {
                Error::Parse(format!(
                    "{}: tensor name is not UTF-8 at byte {}",
                    path.display(),
                    r.pos
                ))
            })?
            .to_string();
        let ndim = r.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = r.take(numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| {
                let f = f32::from_le_bytes(c.try_into().unwrap());
                T::from(f).expect("f32 convertible to element")
            })
            .collect();
        pairs.push((name, Tensor::param(&shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse(format!(
            "{}: {} trailing bytes after the last tensor",
            path.display(),
            bytes.len() - r.pos
        )));
    }
    ModelParams::from_pairs(config, pairs)
}
