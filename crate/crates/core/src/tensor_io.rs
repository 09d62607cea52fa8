//! `UVT1` raw tensor files.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! b"UVT1" | dtype | rank | dim_0 .. dim_{rank-1} | payload
//! ```
//!
//! The only dtype currently defined is `0` (float32); the payload is the
//! row-major float32 little-endian data.

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const UVT_MAGIC: &[u8; 4] = b"UVT1";
pub const DTYPE_F32: u32 = 0;

/// A dense float32 tensor with an explicit shape.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl RawTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::shape(&[n], &[data.len()]));
        }
        Ok(Self { dims, data })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.dims.len() + 4 * self.data.len());
        out.extend_from_slice(UVT_MAGIC);
        out.extend_from_slice(&DTYPE_F32.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, path)?;
        if &magic != UVT_MAGIC {
            return Err(Error::format(path, "bad magic, expected UVT1"));
        }
        let dtype = read_u32(&mut r, path)?;
        if dtype != DTYPE_F32 {
            return Err(Error::format(path, format!("unsupported dtype tag {dtype}")));
        }
        let rank = read_u32(&mut r, path)? as usize;
        if rank > 8 {
            return Err(Error::format(path, format!("implausible rank {rank}")));
        }
        let dims = (0..rank)
            .map(|_| read_u32(&mut r, path).map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n: usize = dims.iter().product();
        if r.len() != 4 * n {
            return Err(Error::format(
                path,
                format!("payload has {} bytes, dims {:?} need {}", r.len(), dims, 4 * n),
            ));
        }
        let data = r
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8], path: &Path) -> Result<()> {
    r.read_exact(buf).map_err(|e: io::Error| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated header")
        } else {
            Error::io(path, e)
        }
    })
}

fn read_u32(r: &mut &[u8], path: &Path) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, path)?;
    Ok(u32::from_le_bytes(b))
}
