//! Versioned container of named tensors plus a JSON metadata block.
//!
//! ```text
//! magic     8 bytes  "TCLCKPT\0"
//! version   u32      1
//! meta_len  u32      byte length of the UTF-8 JSON metadata that follows
//! meta      meta_len bytes
//! count     u32
//! count × tensor:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims u64 × ndim
//!   values   f64 × product(dims)
//! ```
//!
//! Integers and floats are little-endian; values are stored bit-exactly.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TCLCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorArchive {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl TensorArchive {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)?;
        out.write_all(&(meta.len() as u32).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for (name, t) in &self.tensors {
            out.write_all(&(name.len() as u32).to_le_bytes())?;
            out.write_all(name.as_bytes())?;
            out.write_all(&(t.ndim() as u32).to_le_bytes())?;
            for &d in t.shape() {
                out.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: &str| Error::Format {
            path: path.into(),
            reason: reason.into(),
        };
        let mut r = bytes;
        let u32_of = |r: &mut &[u8]| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated"))?;
            Ok(u32::from_le_bytes(b))
        };
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        if u32_of(&mut r)? != CHECKPOINT_VERSION {
            return Err(bad("unsupported checkpoint version"));
        }
        let meta_len = u32_of(&mut r)? as usize;
        if r.len() < meta_len {
            return Err(bad("truncated metadata"));
        }
        let meta = serde_json::from_slice(&r[..meta_len])?;
        r = &r[meta_len..];
        let count = u32_of(&mut r)?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let n = u32_of(&mut r)? as usize;
            if r.len() < n {
                return Err(bad("truncated name"));
            }
            let name = String::from_utf8(r[..n].to_vec()).map_err(|_| bad("name is not UTF-8"))?;
            r = &r[n..];
            let ndim = u32_of(&mut r)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(|_| bad("truncated shape"))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let len: usize = shape.iter().product();
            if r.len() < len * 8 {
                return Err(bad("truncated values"));
            }
            let data = r[..len * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            r = &r[len * 8..];
            tensors.push((name, Tensor::new(shape, data)?));
        }
        if !r.is_empty() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { meta, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?, path)
    }
}
