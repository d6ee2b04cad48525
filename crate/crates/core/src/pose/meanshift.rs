//! Weighted Gaussian-kernel meanshift over twist samples.

use nalgebra::Vector6;
use serde::{Deserialize, Serialize};

use super::{PoseError, PoseSample};
use crate::geometry::Twist;

pub const MEANSHIFT_TOLERANCE: f64 = 1e-8;
pub const MEANSHIFT_MAX_ITERS: usize = 100;
/// Mahalanobis radius kept around the first-pass peak.
pub const PRUNE_RADIUS: f64 = 3.0;
/// Normalized weights are rounded to this resolution so that a uniform
/// rescaling of the input weights cannot change a single bit of the result.
const WEIGHT_RESOLUTION: f64 = 1.0 / (1u64 << 20) as f64;

/// Diagonal kernel covariance: three translation then three rotation
/// variances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelCovariance {
    pub translation: [f64; 3],
    pub rotation: [f64; 3],
}

impl Default for KernelCovariance {
    fn default() -> Self {
        Self::isotropic(0.1, 0.004)
    }
}

impl KernelCovariance {
    pub fn isotropic(translation: f64, rotation: f64) -> Self {
        Self {
            translation: [translation; 3],
            rotation: [rotation; 3],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.translation
            .iter()
            .chain(&self.rotation)
            .all(|v| *v > 0.0 && v.is_finite())
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            translation: self.translation.map(|v| v * s),
            rotation: self.rotation.map(|v| v * s),
        }
    }

    fn inverse_diagonal(&self) -> Vector6<f64> {
        let [a, b, c] = self.translation;
        let [d, e, f] = self.rotation;
        Vector6::new(1.0 / a, 1.0 / b, 1.0 / c, 1.0 / d, 1.0 / e, 1.0 / f)
    }

    /// Squared Mahalanobis distance between two twists.
    pub fn mahalanobis_sq(&self, a: &Vector6<f64>, b: &Vector6<f64>) -> f64 {
        let d = a - b;
        d.component_mul(&d).dot(&self.inverse_diagonal())
    }
}

/// Samples in canonical order with weights normalized by the maximum.
struct Prepared {
    points: Vec<Vector6<f64>>,
    weights: Vec<f64>,
    inv: Vector6<f64>,
}

impl Prepared {
    fn new(samples: &[PoseSample], cov: &KernelCovariance) -> Result<Self, PoseError> {
        let max_w = samples.iter().map(|s| s.weight).fold(0.0, f64::max);
        if !(max_w > 0.0) {
            return Err(PoseError::ZeroWeight);
        }
        let mut items: Vec<(Vector6<f64>, f64)> = samples
            .iter()
            .map(|s| (s.twist.0, ((s.weight / max_w) / WEIGHT_RESOLUTION).round() * WEIGHT_RESOLUTION))
            .filter(|(_, w)| *w > 0.0)
            .collect();
        items.sort_by(|a, b| {
            a.0.iter()
                .zip(b.0.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.total_cmp(&b.1))
        });
        Ok(Self {
            points: items.iter().map(|i| i.0).collect(),
            weights: items.iter().map(|i| i.1).collect(),
            inv: cov.inverse_diagonal(),
        })
    }

    fn sq_dist(&self, x: &Vector6<f64>, i: usize) -> f64 {
        let d = x - self.points[i];
        d.component_mul(&d).dot(&self.inv)
    }

    /// Weighted kernel density (unnormalized) at `x`.
    fn density(&self, x: &Vector6<f64>, active: &[usize]) -> f64 {
        active
            .iter()
            .map(|&i| self.weights[i] * (-0.5 * self.sq_dist(x, i)).exp())
            .sum()
    }

    /// One meanshift step; `None` when every kernel value underflows.
    fn step(&self, x: &Vector6<f64>, active: &[usize]) -> Option<Vector6<f64>> {
        let d: Vec<f64> = active.iter().map(|&i| self.sq_dist(x, i)).collect();
        let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
        // Accumulate offsets from `x` so that a fixed point is reproduced exactly.
        let mut num = Vector6::zeros();
        let mut den = 0.0;
        for (k, &i) in active.iter().enumerate() {
            let w = self.weights[i] * (-0.5 * (d[k] - dmin)).exp();
            num += (self.points[i] - x) * w;
            den += w;
        }
        (den > 0.0).then(|| x + num / den)
    }

    fn climb(&self, start: Vector6<f64>, active: &[usize], trace: Option<&mut Vec<Vector6<f64>>>) -> Vector6<f64> {
        let mut x = start;
        let mut trace = trace;
        if let Some(t) = trace.as_deref_mut() {
            t.push(x);
        }
        for _ in 0..MEANSHIFT_MAX_ITERS {
            let Some(next) = self.step(&x, active) else { break };
            let moved = (next - x).norm();
            x = next;
            if let Some(t) = trace.as_deref_mut() {
                t.push(x);
            }
            if moved < MEANSHIFT_TOLERANCE {
                break;
            }
        }
        x
    }

    /// Coordinate-wise weighted median of the samples.
    fn weighted_median(&self) -> Vector6<f64> {
        let total: f64 = self.weights.iter().sum();
        Vector6::from_fn(|c, _| {
            let mut v: Vec<(f64, f64)> = self.points.iter().map(|p| p[c]).zip(self.weights.iter().copied()).collect();
            v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            let mut acc = 0.0;
            for (x, w) in &v {
                acc += w;
                if acc >= 0.5 * total {
                    return *x;
                }
            }
            v.last().map_or(0.0, |e| e.0)
        })
    }

    /// Indices of the `seeds` largest weights; equal weights are ordered by
    /// distance to `centre`, then canonically.
    fn seed_indices(&self, seeds: usize, centre: &Vector6<f64>) -> Vec<usize> {
        let dist: Vec<f64> = (0..self.points.len()).map(|i| self.sq_dist(centre, i)).collect();
        let mut idx: Vec<usize> = (0..self.points.len()).collect();
        idx.sort_by(|&a, &b| {
            self.weights[b]
                .total_cmp(&self.weights[a])
                .then(dist[a].total_cmp(&dist[b]))
                .then(a.cmp(&b))
        });
        idx.truncate(seeds.max(1));
        idx
    }
}

/// Mode of the weighted kernel density. Restarts from the `seeds`
/// highest-weighted samples and from the coordinate-wise weighted median,
/// keeps the converged point of highest density,
/// prunes samples beyond [`PRUNE_RADIUS`] of it, and refines on the rest.
/// The result does not depend on sample order or on a uniform rescaling of
/// the weights.
pub fn meanshift_mode(samples: &[PoseSample], cov: &KernelCovariance, seeds: usize) -> Result<Twist, PoseError> {
    let prep = Prepared::new(samples, cov)?;
    let all: Vec<usize> = (0..prep.points.len()).collect();
    let centre = prep.weighted_median();
    let starts: Vec<Vector6<f64>> = std::iter::once(centre)
        .chain(prep.seed_indices(seeds, &centre).into_iter().map(|s| prep.points[s]))
        .collect();
    let mut best: Option<(f64, Vector6<f64>)> = None;
    for start in starts {
        let m = prep.climb(start, &all, None);
        let f = prep.density(&m, &all);
        if best.is_none_or(|(bf, _)| f > bf) {
            best = Some((f, m));
        }
    }
    let (_, peak) = best.expect("at least one seed");
    let kept: Vec<usize> = all
        .into_iter()
        .filter(|&i| prep.sq_dist(&peak, i) <= PRUNE_RADIUS * PRUNE_RADIUS)
        .collect();
    if kept.is_empty() {
        return Ok(Twist(peak));
    }
    Ok(Twist(prep.climb(peak, &kept, None)))
}

/// Iterates of an unpruned meanshift climb from `start`, paired with the
/// weighted density at each iterate.
pub fn meanshift_trace(
    samples: &[PoseSample],
    cov: &KernelCovariance,
    start: &Twist,
) -> Result<Vec<(Twist, f64)>, PoseError> {
    let prep = Prepared::new(samples, cov)?;
    let all: Vec<usize> = (0..prep.points.len()).collect();
    let mut trace = Vec::new();
    prep.climb(start.0, &all, Some(&mut trace));
    Ok(trace
        .into_iter()
        .map(|x| (Twist(x), prep.density(&x, &all)))
        .collect())
}

/// Weighted kernel density at `x` with weights normalized by their maximum.
pub fn kernel_density(samples: &[PoseSample], cov: &KernelCovariance, x: &Twist) -> Result<f64, PoseError> {
    let prep = Prepared::new(samples, cov)?;
    let all: Vec<usize> = (0..prep.points.len()).collect();
    Ok(prep.density(&x.0, &all))
}
