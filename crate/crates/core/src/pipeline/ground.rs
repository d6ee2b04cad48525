use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::DepthMap;
use crate::geometry::{Intrinsics, PixelCoord};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GroundError {
    #[error("no ground plane: {kept} pixels with near-vertical normals (need {required})")]
    NoGround { kept: usize, required: usize },
    #[error("lower image half has {valid} valid depths (need {required})")]
    InsufficientDepth { valid: usize, required: usize },
    #[error("invalid ground config: {0}")]
    InvalidConfig(&'static str),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroundConfig {
    /// Largest angle between a pixel normal and the camera's down axis.
    pub normal_tolerance_deg: f64,
    /// Histogram bin width as a fraction of the median height.
    pub bin_fraction: f64,
    pub min_pixels: usize,
    pub min_lower_half: usize,
    /// Pixel offset of the two neighbours spanning the local normal.
    pub step: usize,
}

impl Default for GroundConfig {
    fn default() -> Self {
        Self {
            normal_tolerance_deg: 10.0,
            bin_fraction: 0.02,
            min_pixels: 200,
            min_lower_half: 1000,
            step: 2,
        }
    }
}

impl GroundConfig {
    pub fn validate(&self) -> Result<(), GroundError> {
        if !(self.normal_tolerance_deg > 0.0 && self.normal_tolerance_deg < 90.0) {
            return Err(GroundError::InvalidConfig("normal tolerance must lie in (0, 90) degrees"));
        }
        if !(self.bin_fraction > 0.0 && self.bin_fraction <= 1.0) {
            return Err(GroundError::InvalidConfig("bin fraction must lie in (0, 1]"));
        }
        if self.step == 0 {
            return Err(GroundError::InvalidConfig("step must be positive"));
        }
        Ok(())
    }
}

/// Factor that brings `depth` to metric scale given the true camera height.
///
/// Lower-half pixels are back-projected and given a normal from the cross
/// product of the offsets to their right and lower neighbours. Pixels whose
/// normal lies within the tolerance of the down axis (+y) vote with their
/// plane offset `n·P`; the mode of those heights (largest histogram bin,
/// refined by a parabola through its neighbours) is the camera height in
/// depth units.
pub fn estimate_ground_scale(
    depth: &DepthMap,
    k: &Intrinsics,
    camera_height: f64,
    config: &GroundConfig,
) -> Result<f64, GroundError> {
    config.validate()?;
    let (w, h) = (depth.width(), depth.height());
    let top = h / 2;
    let valid = (top..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| depth.is_valid(x, y))
        .count();
    if valid < config.min_lower_half {
        return Err(GroundError::InsufficientDepth {
            valid,
            required: config.min_lower_half,
        });
    }

    let point = |x: usize, y: usize| k.back_project(PixelCoord::new(x as f64, y as f64), depth.get(x, y));
    let cos_tol = config.normal_tolerance_deg.to_radians().cos();
    let s = config.step;
    let mut heights = Vec::new();
    for y in top..h.saturating_sub(s) {
        for x in 0..w.saturating_sub(s) {
            if !(depth.is_valid(x, y) && depth.is_valid(x + s, y) && depth.is_valid(x, y + s)) {
                continue;
            }
            let p = point(x, y);
            let n = (point(x + s, y) - p).cross(&(point(x, y + s) - p));
            let len = n.norm();
            if !(len > 0.0 && len.is_finite()) {
                continue;
            }
            let mut n = n / len;
            if n.y < 0.0 {
                n = -n;
            }
            if n.y >= cos_tol {
                heights.push(n.dot(&p));
            }
        }
    }
    let no_ground = |kept| GroundError::NoGround {
        kept,
        required: config.min_pixels,
    };
    if heights.len() < config.min_pixels {
        return Err(no_ground(heights.len()));
    }

    let mut sorted = heights.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) {
        return Err(no_ground(0));
    }
    let bin = config.bin_fraction * median;
    let bins = (4.0 / config.bin_fraction).ceil() as usize;
    let mut counts = vec![0usize; bins];
    for v in &heights {
        let i = (v / bin).floor();
        if i >= 0.0 && (i as usize) < bins {
            counts[i as usize] += 1;
        }
    }
    let (best, _) = counts
        .iter()
        .enumerate()
        .fold((0, 0), |acc, (i, &c)| if c > acc.1 { (i, c) } else { acc });
    let mut offset = 0.0;
    if best > 0 && best + 1 < bins {
        let (a, b, c) = (counts[best - 1] as f64, counts[best] as f64, counts[best + 1] as f64);
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            offset = 0.5 * (a - c) / den;
        }
    }
    let mode = (best as f64 + 0.5 + offset) * bin;
    Ok(camera_height / mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, SceneSpec};

    #[test]
    fn recovers_metric_height() {
        let spec = SceneSpec {
            noise: None,
            flows: 1,
            ..SceneSpec::default()
        };
        let scene = generate_scene(&spec, 7).unwrap();
        for &s in &[0.37, 1.0, 4.2] {
            let depth = scene.depths[0].scaled(s);
            let est = estimate_ground_scale(&depth, scene.intrinsics(), spec.ground_height, &GroundConfig::default())
                .unwrap();
            assert!(((est * s) - 1.0).abs() < 0.02, "scale {s}: {est}");
        }
    }

    #[test]
    fn doubling_depth_halves_scale() {
        let scene = generate_scene(&SceneSpec { flows: 1, ..SceneSpec::default() }, 3).unwrap();
        let k = scene.intrinsics();
        let cfg = GroundConfig::default();
        let a = estimate_ground_scale(&scene.depths[0], k, 1.7, &cfg).unwrap();
        let b = estimate_ground_scale(&scene.depths[0].scaled(2.0), k, 1.7, &cfg).unwrap();
        assert_eq!(b, a / 2.0);
    }

    #[test]
    fn fronto_parallel_scene_has_no_ground() {
        let k = Intrinsics::new(200.0, 200.0, 128.0, 96.0).unwrap();
        let depth = DepthMap::filled(256, 192, 10.0);
        let r = estimate_ground_scale(&depth, &k, 1.7, &GroundConfig::default());
        assert!(matches!(r, Err(GroundError::NoGround { kept: 0, .. })), "{r:?}");
    }

    #[test]
    fn sparse_depth_rejected() {
        let k = Intrinsics::new(30.0, 30.0, 16.0, 12.0).unwrap();
        let depth = DepthMap::filled(32, 24, 10.0);
        let r = estimate_ground_scale(&depth, &k, 1.7, &GroundConfig::default());
        assert!(matches!(r, Err(GroundError::InsufficientDepth { valid: 384, .. })), "{r:?}");
    }
}
