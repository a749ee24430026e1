//! Golden-tensor files: a fixed little-endian header followed by raw `f32`
//! values in channel-major order. Used to exchange pyramid inputs and
//! outputs with other implementations, and to store per-pixel illuminant
//! maps.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "GTEN"
//! 4       4     format version (u32, currently 1)
//! 8       4     channels (u32)
//! 12      4     height (u32)
//! 16      4     width (u32)
//! 20      4     pyramid levels (u32, 0 when not a pyramid output)
//! 24      4·N   N = C·H·W f32 values, C × H × W order
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::pyramid::Plane;

pub const MAGIC: &[u8; 4] = b"GTEN";
pub const VERSION: u32 = 1;
const HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenTensor {
    pub plane: Plane,
    pub levels: u32,
}

impl GoldenTensor {
    pub fn new(plane: Plane, levels: u32) -> Self {
        Self { plane, levels }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (c, h, w) = self.plane.shape();
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * c * h * w);
        out.extend_from_slice(MAGIC);
        for v in [VERSION, c as u32, h as u32, w as u32, self.levels] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for &v in self.plane.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(invalid(format!("tensor file truncated: {} header bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(invalid("not a golden-tensor file (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
        let version = word(1);
        if version != VERSION {
            return Err(invalid(format!("unsupported tensor version {version}")));
        }
        let (c, h, w, levels) = (word(2) as usize, word(3) as usize, word(4) as usize, word(5));
        let n = c
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .ok_or_else(|| invalid("tensor dimensions overflow"))?;
        let body = &bytes[HEADER_LEN..];
        if body.len() != 4 * n {
            return Err(invalid(format!(
                "tensor {c}x{h}x{w} needs {} data bytes, found {}",
                4 * n,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Ok(Self {
            plane: Plane::new(c, h, w, data)?,
            levels,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| e.context(path.display().to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = GoldenTensor::new(Plane::filled(2, 3, 4, 1.5).unwrap(), 2);
        let b = t.to_bytes();
        assert_eq!(&b[..4], b"GTEN");
        assert_eq!(b.len(), 24 + 4 * 24);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[20..24].try_into().unwrap()), 2);
        assert_eq!(f32::from_le_bytes(b[24..28].try_into().unwrap()), 1.5);
        assert_eq!(GoldenTensor::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn rejects_truncation_and_magic() {
        let b = GoldenTensor::new(Plane::filled(1, 2, 2, 0.0).unwrap(), 0).to_bytes();
        assert!(GoldenTensor::from_bytes(&b[..b.len() - 1]).is_err());
        assert!(GoldenTensor::from_bytes(&b[..10]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(GoldenTensor::from_bytes(&bad).is_err());
    }
}
