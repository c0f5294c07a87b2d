//! Raw grid container: 16-byte little-endian header + row-major payload.
//!
//! ```text
//! 0  "RDGR"
//! 4  version  u16 = 1
//! 6  dtype    u8  (0 = f64, 1 = f32)
//! 7  reserved u8  = 0
//! 8  height   u32
//! 12 width    u32
//! 16 payload
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ScalarGrid;

pub const RAW_MAGIC: &[u8; 4] = b"RDGR";
pub const RAW_VERSION: u16 = 1;
pub const RAW_HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDtype {
    F64 = 0,
    F32 = 1,
}

impl RawDtype {
    pub fn size(self) -> usize {
        match self {
            RawDtype::F64 => 8,
            RawDtype::F32 => 4,
        }
    }
}

pub fn encode_raw_grid(g: &ScalarGrid, dtype: RawDtype) -> Vec<u8> {
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + dtype.size() * g.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    out.push(dtype as u8);
    out.push(0);
    out.extend_from_slice(&(g.height() as u32).to_le_bytes());
    out.extend_from_slice(&(g.width() as u32).to_le_bytes());
    for &v in g.values() {
        match dtype {
            RawDtype::F64 => out.extend_from_slice(&v.to_le_bytes()),
            RawDtype::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
        }
    }
    out
}

pub fn decode_raw_grid(bytes: &[u8]) -> Result<ScalarGrid> {
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(Error::format("not a raw grid file"));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != RAW_VERSION {
        return Err(Error::format(format!("unsupported raw grid version {version}")));
    }
    let dtype = match bytes[6] {
        0 => RawDtype::F64,
        1 => RawDtype::F32,
        d => return Err(Error::format(format!("unknown raw grid dtype {d}"))),
    };
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let payload = &bytes[RAW_HEADER_LEN..];
    if payload.len() != dtype.size() * h * w {
        return Err(Error::format(format!(
            "raw grid payload is {} bytes, header implies {}",
            payload.len(),
            dtype.size() * h * w
        )));
    }
    let values = match dtype {
        RawDtype::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        RawDtype::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    ScalarGrid::new(h, w, values)
}

pub fn write_raw_grid(path: &Path, g: &ScalarGrid, dtype: RawDtype) -> Result<()> {
    std::fs::write(path, encode_raw_grid(g, dtype))?;
    Ok(())
}

pub fn read_raw_grid(path: &Path) -> Result<ScalarGrid> {
    decode_raw_grid(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_bytes() {
        let g = ScalarGrid::new(2, 3, vec![1.0; 6]).unwrap();
        let b = encode_raw_grid(&g, RawDtype::F32);
        assert_eq!(&b[..16], &[b'R', b'D', b'G', b'R', 1, 0, 1, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(b.len(), 16 + 24);
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
    }

    #[test]
    fn roundtrip_bit_exact() {
        let g = ScalarGrid::from_fn(3, 4, |r, c| (r as f64 + 0.1).powf(c as f64 + 0.3) - 1e-300).unwrap();
        let back = decode_raw_grid(&encode_raw_grid(&g, RawDtype::F64)).unwrap();
        for (a, b) in g.values().iter().zip(back.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn rejects_truncation_and_bad_magic() {
        let g = ScalarGrid::filled(2, 2, 0.5).unwrap();
        let b = encode_raw_grid(&g, RawDtype::F64);
        assert!(matches!(decode_raw_grid(&b[..b.len() - 1]), Err(Error::Format(_))));
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(decode_raw_grid(&bad), Err(Error::Format(_))));
        let mut bad = b;
        bad[6] = 9;
        assert!(matches!(decode_raw_grid(&bad), Err(Error::Format(_))));
    }
}
