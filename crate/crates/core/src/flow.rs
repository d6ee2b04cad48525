//! Dense optical flow fields.

use nalgebra::Vector2;

use crate::geometry::PixelCoord;

/// Dense 2-vector field in pixels/frame, mapping frame `t-1` to frame `t`.
/// Stored row-major; `valid` is `None` when every pixel is valid.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<[f32; 2]>,
    valid: Option<Vec<bool>>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, data: Vec<[f32; 2]>) -> Self {
        assert_eq!(data.len(), width * height, "flow buffer size mismatch");
        Self {
            width,
            height,
            data,
            valid: None,
        }
    }

    pub fn with_validity(width: usize, height: usize, data: Vec<[f32; 2]>, valid: Vec<bool>) -> Self {
        assert_eq!(data.len(), width * height, "flow buffer size mismatch");
        assert_eq!(valid.len(), width * height, "validity mask size mismatch");
        let valid = if valid.iter().all(|&v| v) { None } else { Some(valid) };
        Self {
            width,
            height,
            data,
            valid,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![[0.0; 2]; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 2]) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[[f32; 2]] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [[f32; 2]] {
        &mut self.data
    }

    pub fn validity(&self) -> Option<&[bool]> {
        self.valid.as_deref()
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        match &self.valid {
            Some(v) => v[y * self.width + x],
            None => true,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Vector2<f64> {
        let v = self.data[y * self.width + x];
        Vector2::new(v[0] as f64, v[1] as f64)
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vector2<f64>) {
        self.data[y * self.width + x] = [v.x as f32, v.y as f32];
    }

    pub fn same_shape(&self, other: &FlowField) -> bool {
        self.width == other.width && self.height == other.height
    }

    #[inline]
    pub fn contains(&self, p: PixelCoord) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x <= (self.width - 1) as f64 && p.y <= (self.height - 1) as f64
    }

    /// Bilinear interpolation at a continuous coordinate. `None` outside the
    /// image or when any contributing sample is invalid.
    #[inline]
    pub fn sample(&self, p: PixelCoord) -> Option<Vector2<f64>> {
        if !self.contains(p) {
            return None;
        }
        let x0 = (p.x.floor() as usize).min(self.width - 1);
        let y0 = (p.y.floor() as usize).min(self.height - 1);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = p.x - x0 as f64;
        let fy = p.y - y0 as f64;
        if self.valid.is_some() {
            // Neighbors with zero weight do not contribute.
            let needed = [
                (x0, y0, true),
                (x1, y0, fx > 0.0),
                (x0, y1, fy > 0.0),
                (x1, y1, fx > 0.0 && fy > 0.0),
            ];
            if needed.iter().any(|&(x, y, used)| used && !self.is_valid(x, y)) {
                return None;
            }
        }
        let a = self.get(x0, y0);
        let b = self.get(x1, y0);
        let c = self.get(x0, y1);
        let d = self.get(x1, y1);
        Some((a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy)
    }

    /// Per-pixel flow magnitudes.
    pub fn magnitudes(&self) -> impl Iterator<Item = f64> + '_ {
        self.data
            .iter()
            .map(|v| ((v[0] as f64).powi(2) + (v[1] as f64).powi(2)).sqrt())
    }
}
