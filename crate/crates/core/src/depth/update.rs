//! Depth M-step: per-pixel scores and the propagate-and-sample sweeps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{track_emissions, BatchView, DepthMap, RigidnessMaps};
use crate::geometry::PixelCoord;

/// Objective used to rank depth candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    /// `Σ q · ln[ρ / (ρ + μ)]`: rewards explaining the frames believed rigid.
    #[default]
    Mie,
    /// `Σ q · ln ρ + (1 − q) · ln μ`.
    Mle,
}

#[inline]
fn log_add_exp(a: f64, b: f64) -> f64 {
    let top = a.max(b);
    top + ((a - top).exp() + (b - top).exp()).ln()
}

#[inline]
fn score_from_emissions(em: &[(f64, f64)], q: &[f64], kind: ScoreKind) -> f64 {
    em.iter()
        .zip(q)
        .map(|(&(lr, lm), &w)| match kind {
            ScoreKind::Mie if w == 0.0 => 0.0,
            ScoreKind::Mie => w * (lr - log_add_exp(lr, lm)),
            ScoreKind::Mle => w * lr + (1.0 - w) * lm,
        })
        .sum()
}

/// Score of `depth` at `pixel` given its per-frame rigidness `q`.
pub fn depth_score(view: &BatchView, pixel: PixelCoord, depth: f64, q: &[f64], kind: ScoreKind) -> f64 {
    let mut em = vec![(0.0, 0.0); view.frames()];
    track_emissions(view, pixel, depth, &mut em);
    score_from_emissions(&em, q, kind)
}

pub fn depth_score_mie(view: &BatchView, pixel: PixelCoord, depth: f64, q: &[f64]) -> f64 {
    depth_score(view, pixel, depth, q, ScoreKind::Mie)
}

pub fn depth_score_mle(view: &BatchView, pixel: PixelCoord, depth: f64, q: &[f64]) -> f64 {
    depth_score(view, pixel, depth, q, ScoreKind::Mle)
}

fn pixel_q(q: &RigidnessMaps, frames: usize, index: usize) -> Vec<f64> {
    (0..frames).map(|k| q.get(k, index)).collect()
}

/// Score of every pixel's current depth; invalid pixels score `-∞`.
pub fn score_map(view: &BatchView, depth: &DepthMap, q: &RigidnessMaps, kind: ScoreKind) -> Vec<f64> {
    let (w, n) = (depth.width(), view.frames());
    (0..depth.len())
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if !depth.is_valid(x, y) {
                return f64::NEG_INFINITY;
            }
            let qp = pixel_q(q, n, i);
            depth_score(view, PixelCoord::new(x as f64, y as f64), depth.get(x, y), &qp, kind)
        })
        .collect()
}

/// Sampling range for fresh depth candidates, uniform in inverse depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseDepthRange {
    pub min_inverse: f64,
    pub max_inverse: f64,
}

impl InverseDepthRange {
    /// `[1/(10·median), 1/(0.1·median)]`.
    pub fn around_median(median: f64) -> Self {
        assert!(median > 0.0 && median.is_finite());
        Self {
            min_inverse: 1.0 / (10.0 * median),
            max_inverse: 1.0 / (0.1 * median),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        1.0 / rng.random_range(self.min_inverse..=self.max_inverse)
    }
}

/// Result of one M-step: the new depth map and each pixel's final score.
#[derive(Clone, Debug)]
pub struct DepthUpdate {
    pub depth: DepthMap,
    pub scores: Vec<f64>,
}

impl DepthUpdate {
    /// Mean score over valid pixels.
    pub fn mean_score(&self) -> f64 {
        let (s, n) = self
            .scores
            .iter()
            .filter(|s| s.is_finite())
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }
}

struct Cell {
    index: usize,
    depth: f64,
    score: f64,
    valid: bool,
}

/// Sweep one line of cells in order: each pixel keeps the best of its current
/// depth, the depth handed on by the previous pixel, and a fresh sample.
/// Replacement requires a strictly higher score.
fn sweep_line(
    view: &BatchView,
    q: &RigidnessMaps,
    kind: ScoreKind,
    range: &InverseDepthRange,
    line: &mut [Cell],
    rng: &mut ChaCha8Rng,
) {
    let n = view.frames();
    let w = view.width();
    let mut em = vec![(0.0, 0.0); n];
    let mut carried: Option<f64> = None;
    for cell in line.iter_mut() {
        if !cell.valid {
            carried = None;
            continue;
        }
        let pixel = PixelCoord::new((cell.index % w) as f64, (cell.index / w) as f64);
        let qp = pixel_q(q, n, cell.index);
        let mut score = |d: f64| {
            track_emissions(view, pixel, d, &mut em);
            score_from_emissions(&em, &qp, kind)
        };
        let sampled = range.sample(rng);
        let mut best = (cell.depth, cell.score);
        if let Some(d) = carried {
            let s = score(d);
            if s > best.1 {
                best = (d, s);
            }
        }
        let s = score(sampled);
        if s > best.1 {
            best = (sampled, s);
        }
        cell.depth = best.0;
        cell.score = best.1;
        carried = Some(best.0);
    }
}

/// One M-step: sweeps left→right, right→left, top→bottom and bottom→top.
/// Lines of one direction run in parallel, each with its own random stream
/// derived from a single draw on `rng`, so results do not depend on thread
/// scheduling. No pixel's score ever decreases.
pub fn update_depth_map<R: Rng + ?Sized>(
    view: &BatchView,
    depth: &DepthMap,
    q: &RigidnessMaps,
    kind: ScoreKind,
    range: &InverseDepthRange,
    rng: &mut R,
) -> DepthUpdate {
    assert!(view.frames() >= 1, "depth update needs at least one pose");
    let (w, h) = (depth.width(), depth.height());
    let base_seed: u64 = rng.random();
    let initial = score_map(view, depth, q, kind);
    let mut depths: Vec<f64> = depth.data().to_vec();
    let mut scores = initial;
    let valid = depth.validity();

    // (line count, line length, index of (line, pos), reversed)
    type Layout = (usize, usize, fn(usize, usize, usize, usize) -> usize, bool);
    let row = |l: usize, p: usize, w: usize, _h: usize| l * w + p;
    let col = |l: usize, p: usize, w: usize, _h: usize| p * w + l;
    let layouts: [Layout; 4] = [(h, w, row, false), (h, w, row, true), (w, h, col, false), (w, h, col, true)];

    for (dir, &(lines, len, at, reversed)) in layouts.iter().enumerate() {
        let updated: Vec<Vec<Cell>> = (0..lines)
            .into_par_iter()
            .map(|l| {
                let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
                rng.set_stream((dir * 1_000_003 + l) as u64);
                let mut line: Vec<Cell> = (0..len)
                    .map(|p| {
                        let p = if reversed { len - 1 - p } else { p };
                        let index = at(l, p, w, h);
                        Cell {
                            index,
                            depth: depths[index],
                            score: scores[index],
                            valid: valid[index],
                        }
                    })
                    .collect();
                sweep_line(view, q, kind, range, &mut line, &mut rng);
                line
            })
            .collect();
        for cell in updated.into_iter().flatten() {
            depths[cell.index] = cell.depth;
            scores[cell.index] = cell.score;
        }
    }

    let mut out = depth.clone();
    for (i, d) in depths.into_iter().enumerate() {
        if valid[i] {
            out.set(i % w, i / w, d);
        }
    }
    DepthUpdate { depth: out, scores }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::{ObservationModel, ResidualModel};
    use crate::testutil::{forward_motion, plane_depth, plane_flows, test_intrinsics};
    use nalgebra::Vector3;

    struct Scene {
        k: crate::geometry::Intrinsics,
        flows: Vec<crate::flow::FlowField>,
        poses: Vec<crate::geometry::Pose>,
        truth: DepthMap,
        model: ObservationModel,
    }

    fn scene(w: usize, h: usize) -> Scene {
        plane_scene(w, h, Vector3::new(0.0, -0.2, 1.0).normalize())
    }

    fn plane_scene(w: usize, h: usize, normal: Vector3<f64>) -> Scene {
        let k = test_intrinsics();
        let poses = forward_motion(3);
        Scene {
            flows: plane_flows(&k, w, h, &poses, &normal, 10.0),
            truth: plane_depth(&k, w, h, &normal, 10.0),
            k,
            poses,
            model: ObservationModel::fisk(ResidualModel::KITTI),
        }
    }

    #[test]
    fn sweep_maximum_is_true_depth() {
        let s = scene(64, 48);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let q = [1.0; 3];
        for &(x, y) in &[(10usize, 10usize), (50, 40), (32, 5)] {
            let px = PixelCoord::new(x as f64, y as f64);
            let d0 = s.truth.get(x, y);
            let grid: Vec<f64> = (0..200).map(|i| d0 * 0.25 * 16f64.powf(i as f64 / 199.0)).collect();
            for kind in [ScoreKind::Mie, ScoreKind::Mle] {
                let best = grid
                    .iter()
                    .copied()
                    .max_by(|a, b| depth_score(&view, px, *a, &q, kind).total_cmp(&depth_score(&view, px, *b, &q, kind)))
                    .unwrap();
                let step = 16f64.powf(1.0 / 199.0);
                assert!(best / d0 < step && d0 / best < step, "{kind:?}: {best} vs {d0}");
            }
        }
    }

    #[test]
    fn zero_rigidness_scores_zero() {
        let s = scene(16, 12);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let px = PixelCoord::new(3.0, 4.0);
        for d in [0.5, 5.0, 50.0] {
            assert_eq!(depth_score_mie(&view, px, d, &[0.0; 3]), 0.0);
        }
    }

    #[test]
    fn mie_score_is_nonpositive() {
        let s = scene(16, 12);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        for d in [0.1, 1.0, 7.0, 100.0] {
            assert!(depth_score_mie(&view, PixelCoord::new(8.0, 6.0), d, &[0.3, 1.0, 0.9]) <= 0.0);
        }
    }

    #[test]
    fn seeded_row_propagates_in_one_sweep() {
        // Fronto-parallel wall: the true depth is constant along every row.
        let s = plane_scene(64, 48, Vector3::z());
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let y = 30;
        let truth = s.truth.get(0, y);
        let mut depth = DepthMap::filled(64, 48, 3.0);
        depth.set(0, y, truth);
        let q = RigidnessMaps::ones(64, 48, 3);
        // A degenerate sampling range makes every fresh sample the wrong value.
        let range = InverseDepthRange {
            min_inverse: 1.0 / 3.0,
            max_inverse: 1.0 / 3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = update_depth_map(&view, &depth, &q, ScoreKind::Mie, &range, &mut rng);
        assert!((0..64).all(|x| out.depth.get(x, y) == truth));
    }

    #[test]
    fn optimal_depth_is_kept() {
        let s = scene(32, 24);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let q = RigidnessMaps::ones(32, 24, 3);
        let range = InverseDepthRange::around_median(s.truth.median().unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let before = score_map(&view, &s.truth, &q, ScoreKind::Mie);
        let out = update_depth_map(&view, &s.truth, &q, ScoreKind::Mie, &range, &mut rng);
        for (i, (a, b)) in before.iter().zip(&out.scores).enumerate() {
            assert!(b >= a);
            if b == a {
                assert_eq!(out.depth.data()[i], s.truth.data()[i]);
            }
        }
    }

    #[test]
    fn scores_never_decrease() {
        let s = scene(32, 24);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let depth = DepthMap::from_fn(32, 24, |_, _| rng.random_range(2.0..30.0));
        let q = RigidnessMaps::from_vec(32, 24, 3, (0..32 * 24 * 3).map(|_| rng.random::<f64>()).collect());
        let range = InverseDepthRange::around_median(depth.median().unwrap());
        let before = score_map(&view, &depth, &q, ScoreKind::Mie);
        let out = update_depth_map(&view, &depth, &q, ScoreKind::Mie, &range, &mut rng);
        assert!(before.iter().zip(&out.scores).all(|(a, b)| b >= a));
        assert_eq!(out.scores, score_map(&view, &out.depth, &q, ScoreKind::Mie));
    }

    #[test]
    fn update_is_deterministic() {
        let s = scene(32, 24);
        let view = BatchView::new(&s.k, &s.flows, &s.poses, &s.model);
        let depth = DepthMap::filled(32, 24, 5.0);
        let q = RigidnessMaps::ones(32, 24, 3);
        let range = InverseDepthRange::around_median(5.0);
        let a = update_depth_map(&view, &depth, &q, ScoreKind::Mie, &range, &mut ChaCha8Rng::seed_from_u64(2));
        let b = update_depth_map(&view, &depth, &q, ScoreKind::Mie, &range, &mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(a.depth, b.depth);
    }
}
