//! Versioned binary file of named tensors.
//!
//! Layout (little endian): magic `HTCK`, `u32` version, `u32` metadata length
//! and UTF-8 JSON metadata, `u32` tensor count, then per tensor: `u32` name
//! length, name, `u32` rank, `u64` per dimension, `u8` dtype (0 = f64,
//! 1 = f32), row-major data.

use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 4] = b"HTCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated checkpoint")]
    Truncated,
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("tensor {name}: {msg}")]
    Tensor { name: String, msg: String },
    #[error("missing tensor {0}")]
    Missing(String),
    #[error("bad metadata: {0}")]
    Metadata(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub metadata: String,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| CheckpointError::Missing(name.into()))
    }

    pub fn encode(&self, dtype: Dtype) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
        out.extend_from_slice(self.metadata.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for d in &t.shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match dtype {
                Dtype::F64 => {
                    out.push(0);
                    t.data.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
                }
                Dtype::F32 => {
                    out.push(1);
                    t.data.iter().for_each(|x| out.extend_from_slice(&(*x as f32).to_le_bytes()));
                }
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { b: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let n = r.u32()? as usize;
        let metadata = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let count = r.u32()?;
        let mut tensors = Vec::with_capacity(count.min(4096) as usize);
        for _ in 0..count {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let len = shape
                .iter()
                .try_fold(1usize, |a, d| a.checked_mul(*d))
                .ok_or_else(|| CheckpointError::Tensor { name: name.clone(), msg: "shape overflow".into() })?;
            let data = match r.take(1)?[0] {
                0 => r.take(len.checked_mul(8).ok_or(CheckpointError::Truncated)?)?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                    .collect(),
                1 => r.take(len.checked_mul(4).ok_or(CheckpointError::Truncated)?)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")) as f64)
                    .collect(),
                t => return Err(CheckpointError::BadDtype(t)),
            };
            tensors.push(Tensor { name, shape, data });
        }
        Ok(Self { metadata, tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        std::fs::File::create(path)?.write_all(&self.encode(Dtype::F64))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.b.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        Checkpoint {
            metadata: "{\"k\":1}".into(),
            tensors: vec![
                Tensor { name: "a.weight".into(), shape: vec![2, 3], data: vec![0.1, -2.0, 3.5, 1e-300, f64::MAX, -0.0] },
                Tensor { name: "a.bias".into(), shape: vec![2], data: vec![7.0, 8.0] },
            ],
        }
    }

    #[test]
    fn f64_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::decode(&c.encode(Dtype::F64)).unwrap();
        for (a, b) in c.tensors.iter().zip(&back.tensors) {
            assert_eq!(a.shape, b.shape);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(back.metadata, c.metadata);
    }

    #[test]
    fn f32_rounds() {
        let back = Checkpoint::decode(&sample().encode(Dtype::F32)).unwrap();
        assert_eq!(back.get("a.bias").unwrap().data, vec![7.0, 8.0]);
        assert_eq!(back.get("a.weight").unwrap().data[0], 0.1f32 as f64);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().encode(Dtype::F64);
        assert!(matches!(Checkpoint::decode(&bytes[..bytes.len() - 3]), Err(CheckpointError::Truncated)));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::decode(&bad), Err(CheckpointError::BadMagic)));
        let mut v = bytes;
        v[4] = 9;
        assert!(matches!(Checkpoint::decode(&v), Err(CheckpointError::UnsupportedVersion(9))));
        assert!(matches!(sample().get("nope"), Err(CheckpointError::Missing(_))));
    }
}
