//! Portable weight files.
//!
//! Layout, all integers little-endian:
//!
//! | offset | bytes | field |
//! |-------:|------:|-------|
//! | 0 | 8 | magic `ARQCKPT\0` |
//! | 8 | 4 | format version (`u32`, currently 1) |
//! | 12 | 4 | training precision in bits (`u32`, 32 or 64) |
//! | 16 | 32 | SHA-256 digest of the resolved run config |
//! | 48 | 8 | environment steps completed (`u64`) |
//! | 56 | 4 | matrix count `N` (`u32`) |
//! | 60 | 8N | `(rows: u32, cols: u32)` per matrix |
//! | 60+8N | 4·Σ rows·cols | entries as `f32`, row-major, matrices in order |
//!
//! Nothing follows the last matrix.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Matrix, Real};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ARQCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub precision: u32,
    pub digest: [u8; 32],
    pub step: u64,
    pub matrices: Vec<Matrix<f32>>,
}

impl Checkpoint {
    pub fn new<T: Real>(digest: [u8; 32], step: u64, matrices: &[&Matrix<T>]) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            precision: T::BITS,
            digest,
            step,
            matrices: matrices.iter().map(|m| m.cast()).collect(),
        }
    }

    pub fn digest_hex(&self) -> String {
        self.digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.matrices.iter().map(|m| m.len() * 4).sum();
        let mut out = Vec::with_capacity(60 + 8 * self.matrices.len() + payload);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.precision.to_le_bytes());
        out.extend_from_slice(&self.digest);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&(self.matrices.len() as u32).to_le_bytes());
        for m in &self.matrices {
            out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
        }
        for m in &self.matrices {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 8];
        take(&mut r, &mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32_le(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let precision = u32_le(&mut r)?;
        if precision != 32 && precision != 64 {
            return Err(Error::Checkpoint(format!("bad precision field {precision}")));
        }
        let mut digest = [0u8; 32];
        take(&mut r, &mut digest)?;
        let mut step = [0u8; 8];
        take(&mut r, &mut step)?;
        let n = u32_le(&mut r)? as usize;
        let mut shapes = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            shapes.push((u32_le(&mut r)? as usize, u32_le(&mut r)? as usize));
        }
        let mut matrices = Vec::with_capacity(n.min(1024));
        for (rows, cols) in shapes {
            let len = rows
                .checked_mul(cols)
                .filter(|&l| l.saturating_mul(4) <= r.len())
                .ok_or_else(|| Error::Checkpoint("truncated matrix data".into()))?;
            let data = r[..len * 4]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            r = &r[len * 4..];
            matrices.push(Matrix::from_vec(rows, cols, data)?);
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", r.len())));
        }
        Ok(Self {
            version,
            precision,
            digest,
            step: u64::from_le_bytes(step),
            matrices,
        })
    }
}

fn take(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("truncated header".into()))
}

fn u32_le(r: &mut &[u8]) -> Result<u32> {
    let mut b = [0u8; 4];
    take(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn write_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let a = Matrix::from_vec(2, 3, vec![1.0f64, -2.0, 0.5, 3.25, 0.0, -0.125]).unwrap();
        let b = Matrix::from_vec(1, 2, vec![7.0f64, 8.0]).unwrap();
        Checkpoint::new([9u8; 32], 1234, &[&a, &b])
    }

    #[test]
    fn byte_layout() {
        let bytes = sample().to_bytes();
        assert_eq!(&bytes[..8], b"ARQCKPT\0");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 64);
        assert_eq!(&bytes[16..48], &[9u8; 32]);
        assert_eq!(u64::from_le_bytes(bytes[48..56].try_into().unwrap()), 1234);
        assert_eq!(u32::from_le_bytes(bytes[56..60].try_into().unwrap()), 2);
        assert_eq!(&bytes[60..68], &[2, 0, 0, 0, 3, 0, 0, 0]);
        // first entry 1.0f32 right after the shape table
        assert_eq!(&bytes[76..80], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 76 + 8 * 4);
    }

    #[test]
    fn round_trip_and_corruption() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), c);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
    }
}
