//! File formats: Middlebury and KITTI flow, KITTI disparity, binary rasters,
//! KITTI/TUM trajectories, residual samples, calibration and configuration.

mod flo;
mod kitti;
mod raster;
mod text;

use std::path::{Path, PathBuf};

use thiserror::Error;

pub use flo::{decode_flo, encode_flo, read_flo, write_flo, FLO_MAGIC, FLO_UNKNOWN};
pub use kitti::{
    decode_kitti_flow_value, encode_kitti_flow_value, read_disparity_png, read_kitti_flow_png, write_disparity_png,
    write_kitti_flow_png, DisparityMap,
};
pub use raster::{read_raster, write_raster, Raster, RASTER_MAGIC};
pub use text::{
    format_trajectory, parse_calibration, parse_trajectory, read_calibration, read_config, read_residual_samples,
    read_trajectory, write_residual_samples, write_trajectory, TrajectoryFormat,
};

use crate::flow::FlowField;
use crate::pipeline::FlowSource;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad magic number")]
    BadMagic,
    #[error("file is truncated")]
    Truncated,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("unsupported format: {0}")]
    Format(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Read a flow field, choosing the format by extension (`.png` is KITTI,
/// anything else Middlebury).
pub fn read_flow(path: &Path) -> Result<FlowField, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => read_kitti_flow_png(path),
        _ => read_flo(path),
    }
}

/// Write a flow field, choosing the format by extension as [`read_flow`].
pub fn write_flow(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("png") => write_kitti_flow_png(path, flow),
        _ => write_flo(path, flow),
    }
}

/// Flow files of a directory (`.flo` and `.png`), in file-name order.
#[derive(Clone, Debug)]
pub struct FlowDirectory {
    pub paths: Vec<PathBuf>,
}

impl FlowDirectory {
    pub fn open(dir: &Path) -> Result<Self, IoError> {
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
            if path.is_file() && matches!(ext.as_deref(), Some("flo") | Some("png")) {
                paths.push(path);
            }
        }
        paths.sort();
        Ok(Self { paths })
    }
}

impl FlowSource for FlowDirectory {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn load(&self, index: usize) -> Result<FlowField, Box<dyn std::error::Error + Send + Sync>> {
        Ok(read_flow(&self.paths[index])?)
    }
}
