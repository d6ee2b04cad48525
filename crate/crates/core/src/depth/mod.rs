//! Depth and rigidness updates of the alternating inference loop.

mod emission;
mod hmm;
mod update;

pub use emission::{emission, track_emissions, BatchView, EmissionTable};
pub use hmm::{forward_backward, local_posterior, rigidness_from_emissions, update_rigidness};
pub use update::{
    depth_score, depth_score_mie, depth_score_mle, score_map, update_depth_map, DepthUpdate,
    InverseDepthRange, ScoreKind,
};

/// Per-pixel depth of the reference (first) frame of a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthMap {
    pub fn filled(width: usize, height: usize, depth: f64) -> Self {
        assert!(depth > 0.0 && depth.is_finite());
        Self {
            width,
            height,
            data: vec![depth; width * height],
            valid: vec![true; width * height],
        }
    }

    /// Build from raw values; entries that are not positive and finite are
    /// marked invalid.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "depth buffer size mismatch");
        let valid = data.iter().map(|d| *d > 0.0 && d.is_finite()).collect();
        Self {
            width,
            height,
            data,
            valid,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::from_vec(width, height, data)
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

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: f64) {
        let i = y * self.width + x;
        self.data[i] = depth;
        self.valid[i] = depth > 0.0 && depth.is_finite();
    }

    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Median of the valid depths, `None` if there are none.
    pub fn median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self
            .data
            .iter()
            .zip(&self.valid)
            .filter(|(_, ok)| **ok)
            .map(|(d, _)| *d)
            .collect();
        if v.is_empty() {
            return None;
        }
        let mid = v.len() / 2;
        let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
        Some(*m)
    }

    /// Replace every invalid entry with `depth` and mark it valid.
    pub fn fill_invalid(&mut self, depth: f64) {
        for (d, ok) in self.data.iter_mut().zip(self.valid.iter_mut()) {
            if !*ok {
                *d = depth;
                *ok = true;
            }
        }
    }

    pub fn scaled(&self, s: f64) -> DepthMap {
        let mut out = self.clone();
        for d in &mut out.data {
            *d *= s;
        }
        out
    }
}

/// Per-frame rigidness probabilities `q(W = 1)` over the reference grid.
/// Map `k` belongs to flow `k` of the batch (frame `k` to `k + 1`).
#[derive(Clone, Debug, PartialEq)]
pub struct RigidnessMaps {
    width: usize,
    height: usize,
    frames: usize,
    data: Vec<f64>,
}

impl RigidnessMaps {
    pub fn filled(width: usize, height: usize, frames: usize, q: f64) -> Self {
        assert!((0.0..=1.0).contains(&q));
        Self {
            width,
            height,
            frames,
            data: vec![q; width * height * frames],
        }
    }

    pub fn ones(width: usize, height: usize, frames: usize) -> Self {
        Self::filled(width, height, frames, 1.0)
    }

    pub fn from_vec(width: usize, height: usize, frames: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height * frames);
        assert!(data.iter().all(|q| (0.0..=1.0).contains(q)), "rigidness outside [0, 1]");
        Self {
            width,
            height,
            frames,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame(&self, k: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.data[k * n..(k + 1) * n]
    }

    pub fn frame_mut(&mut self, k: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.data[k * n..(k + 1) * n]
    }

    #[inline]
    pub fn get(&self, k: usize, index: usize) -> f64 {
        self.data[k * self.width * self.height + index]
    }

    pub fn mean(&self, k: usize) -> f64 {
        let f = self.frame(k);
        f.iter().sum::<f64>() / f.len() as f64
    }

    pub fn mean_all(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Per pixel, the sum of its rigidness over all maps.
    pub fn pixel_sums(&self) -> Vec<f64> {
        let n = self.width * self.height;
        (0..n).map(|i| (0..self.frames).map(|k| self.data[k * n + i]).sum()).collect()
    }

    /// Mean of map `k` restricted to pixels where `mask` is set.
    pub fn masked_mean(&self, k: usize, mask: &[bool]) -> Option<f64> {
        let (sum, n) = self
            .frame(k)
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .fold((0.0, 0usize), |(s, n), (q, _)| (s + q, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn invalid_entries_are_flagged_and_filled() {
        let mut d = DepthMap::from_vec(2, 2, vec![1.0, -1.0, f64::NAN, 3.0]);
        assert_eq!(d.valid_count(), 2);
        assert_eq!(d.median(), Some(3.0));
        d.fill_invalid(2.0);
        assert_eq!(d.data(), &[1.0, 2.0, 2.0, 3.0]);
        assert_eq!(d.valid_count(), 4);
    }

    #[test]
    fn masked_rigidness_mean() {
        let q = RigidnessMaps::from_vec(2, 1, 2, vec![0.2, 0.4, 1.0, 0.0]);
        assert_eq!(q.masked_mean(1, &[true, false]), Some(1.0));
        assert!((q.mean(0) - 0.3).abs() < 1e-15);
        assert_eq!(q.masked_mean(0, &[false, false]), None);
    }
}
