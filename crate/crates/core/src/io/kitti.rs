use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, ImageReader, Luma, Rgb};

use super::IoError;
use crate::flow::FlowField;

/// KITTI-style disparity map; zero in the file means no measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct DisparityMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DisparityMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), width * height);
        let valid = values.iter().map(|v| *v > 0.0 && v.is_finite()).collect();
        Self {
            width,
            height,
            values,
            valid,
        }
    }
}

/// 16-bit code of one flow component: `v·64 + 2¹⁵`, rounded and clamped.
pub fn encode_kitti_flow_value(v: f64) -> u16 {
    (v * 64.0 + 32768.0).round().clamp(0.0, 65535.0) as u16
}

pub fn decode_kitti_flow_value(raw: u16) -> f64 {
    (raw as f64 - 32768.0) / 64.0
}

fn open(path: &Path) -> Result<DynamicImage, IoError> {
    ImageReader::open(path)?
        .decode()
        .map_err(|e| IoError::Format(e.to_string()))
}

/// KITTI flow PNG: 16-bit RGB with `u`, `v` and a validity channel.
pub fn read_kitti_flow_png(path: &Path) -> Result<FlowField, IoError> {
    let DynamicImage::ImageRgb16(img) = open(path)? else {
        return Err(IoError::Format("flow PNG must be 16-bit RGB".into()));
    };
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Vec::with_capacity(w * h);
    let mut valid = Vec::with_capacity(w * h);
    for p in img.pixels() {
        let [r, g, b] = p.0;
        data.push([decode_kitti_flow_value(r) as f32, decode_kitti_flow_value(g) as f32]);
        valid.push(b > 0);
    }
    Ok(FlowField::with_validity(w, h, data, valid))
}

pub fn write_kitti_flow_png(path: &Path, flow: &FlowField) -> Result<(), IoError> {
    let w = flow.width();
    let img: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_fn(w as u32, flow.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        let v = flow.get(x, y);
        if flow.is_valid(x, y) {
            Rgb([encode_kitti_flow_value(v.x), encode_kitti_flow_value(v.y), 1])
        } else {
            Rgb([32768, 32768, 0])
        }
    });
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| IoError::Format(e.to_string()))
}

/// KITTI disparity PNG: 16-bit grey, disparity·256, zero for invalid.
pub fn read_disparity_png(path: &Path) -> Result<DisparityMap, IoError> {
    let DynamicImage::ImageLuma16(img) = open(path)? else {
        return Err(IoError::Format("disparity PNG must be 16-bit greyscale".into()));
    };
    let values = img.pixels().map(|p| p.0[0] as f64 / 256.0).collect();
    Ok(DisparityMap::new(img.width() as usize, img.height() as usize, values))
}

pub fn write_disparity_png(path: &Path, disparity: &DisparityMap) -> Result<(), IoError> {
    let w = disparity.width;
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_fn(w as u32, disparity.height as u32, |x, y| {
            let i = y as usize * w + x as usize;
            let raw = if disparity.valid[i] {
                (disparity.values[i] * 256.0).round().clamp(1.0, 65535.0) as u16
            } else {
                0
            };
            Luma([raw])
        });
    img.save_with_format(path, ImageFormat::Png)
        .map_err(|e| IoError::Format(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_flow_encodes_to_32832() {
        assert_eq!(encode_kitti_flow_value(1.0), 32832);
        assert_eq!(decode_kitti_flow_value(32832), 1.0);
        assert_eq!(encode_kitti_flow_value(-1e6), 0);
    }

    #[test]
    fn flow_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flow.png");
        let flow = FlowField::with_validity(
            3,
            1,
            vec![[1.0, -0.5], [10.015625, 3.25], [0.0, 0.0]],
            vec![true, true, false],
        );
        write_kitti_flow_png(&path, &flow).unwrap();
        let back = read_kitti_flow_png(&path).unwrap();
        assert_eq!(back, flow);
    }

    #[test]
    fn disparity_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("disp.png");
        let d = DisparityMap::new(2, 2, vec![0.0, 12.5, 100.25, 3.0]);
        write_disparity_png(&path, &d).unwrap();
        assert_eq!(read_disparity_png(&path).unwrap(), d);
    }

    #[test]
    fn eight_bit_png_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rgb8.png");
        let img: ImageBuffer<Rgb<u8>, Vec<u8>> = ImageBuffer::new(2, 2);
        img.save(&path).unwrap();
        assert!(matches!(read_kitti_flow_png(&path), Err(IoError::Format(_))));
    }
}
