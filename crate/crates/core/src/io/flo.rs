use std::fs;
use std::path::Path;

use super::IoError;
use crate::flow::FlowField;

/// Header tag of a Middlebury `.flo` file ("PIEH" read as a float).
pub const FLO_MAGIC: f32 = 202021.25;
/// Components above this magnitude mark an unknown flow.
pub const FLO_UNKNOWN: f32 = 1e9;
const UNKNOWN_VALUE: f32 = 1e10;

pub fn decode_flo(bytes: &[u8]) -> Result<FlowField, IoError> {
    if bytes.len() < 4 {
        return Err(IoError::Truncated);
    }
    let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
    if f32::from_le_bytes(word(0)) != FLO_MAGIC {
        return Err(IoError::BadMagic);
    }
    if bytes.len() < 12 {
        return Err(IoError::Truncated);
    }
    let (w, h) = (i32::from_le_bytes(word(4)), i32::from_le_bytes(word(8)));
    if w <= 0 || h <= 0 {
        return Err(IoError::DimensionMismatch(format!("header declares {w}×{h}")));
    }
    let (w, h) = (w as usize, h as usize);
    let expected = 12 + 8 * w * h;
    if bytes.len() < expected {
        return Err(IoError::Truncated);
    }
    if bytes.len() > expected {
        return Err(IoError::DimensionMismatch(format!(
            "{} bytes of payload for {w}×{h}",
            bytes.len() - 12
        )));
    }
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let u = f32::from_le_bytes(word(12 + 8 * i));
        let v = f32::from_le_bytes(word(16 + 8 * i));
        let ok = u.is_finite() && v.is_finite() && u.abs() < FLO_UNKNOWN && v.abs() < FLO_UNKNOWN;
        data.push(if ok { [u, v] } else { [0.0, 0.0] });
        valid.push(ok);
    }
    Ok(FlowField::with_validity(w, h, data, valid))
}

/// Invalid pixels are written as the conventional unknown value 1e10.
pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let (w, h) = (flow.width(), flow.height());
    let mut out = Vec::with_capacity(12 + 8 * w * h);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(w as i32).to_le_bytes());
    out.extend_from_slice(&(h as i32).to_le_bytes());
    for (i, v) in flow.data().iter().enumerate() {
        let v = if flow.is_valid(i % w, i / w) { *v } else { [UNKNOWN_VALUE; 2] };
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    out
}

pub fn read_flo(path: &Path) -> Result<FlowField, IoError> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    fs::write(path, encode_flo(flow))?;
    Ok(())
}
