use std::fs;
use std::path::Path;

use super::IoError;
use crate::depth::DepthMap;

/// Header tag of the single-channel f32 raster format.
pub const RASTER_MAGIC: [u8; 8] = *b"FVRASTER";

/// Row-major f32 grid: 8-byte magic, u32 width, u32 height, then
/// `width·height` little-endian f32 values. Depth maps store invalid
/// pixels as 0.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Raster {
    pub fn from_depth(depth: &DepthMap) -> Self {
        let values = depth
            .data()
            .iter()
            .zip(depth.validity())
            .map(|(d, ok)| if *ok { *d as f32 } else { 0.0 })
            .collect();
        Self {
            width: depth.width(),
            height: depth.height(),
            values,
        }
    }

    pub fn to_depth(&self) -> DepthMap {
        DepthMap::from_vec(self.width, self.height, self.values.iter().map(|v| *v as f64).collect())
    }
}

pub fn write_raster(path: &Path, raster: &Raster) -> Result<(), IoError> {
    let mut out = Vec::with_capacity(16 + 4 * raster.values.len());
    out.extend_from_slice(&RASTER_MAGIC);
    out.extend_from_slice(&(raster.width as u32).to_le_bytes());
    out.extend_from_slice(&(raster.height as u32).to_le_bytes());
    for v in &raster.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_raster(path: &Path) -> Result<Raster, IoError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 8 {
        return Err(IoError::Truncated);
    }
    if bytes[..8] != RASTER_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < 16 {
        return Err(IoError::Truncated);
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    let (w, h) = (u32::from_le_bytes(word(8)) as usize, u32::from_le_bytes(word(12)) as usize);
    let expected = 16 + 4 * w * h;
    if bytes.len() < expected {
        return Err(IoError::Truncated);
    }
    if bytes.len() > expected {
        return Err(IoError::DimensionMismatch(format!("trailing bytes after {w}×{h} raster")));
    }
    let values = (0..w * h).map(|i| f32::from_le_bytes(word(16 + 4 * i))).collect();
    Ok(Raster {
        width: w,
        height: h,
        values,
    })
}
