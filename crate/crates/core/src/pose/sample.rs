//! Minimal-sample pose hypotheses from depth, flow and rigidness.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{PoseError, PoseSample};
use crate::depth::{BatchView, DepthMap};
use crate::geometry::{solve_p3p, PixelCoord, Pose, Twist};

/// Reprojection errors closer than this (pixels) count as a tie between
/// P3P candidates and fall back to distance from the prior.
const DISAMBIGUATION_TIE_PX: f64 = 1e-6;

/// One usable 3D–2D correspondence for frame `t`.
#[derive(Clone, Copy, Debug)]
struct Correspondence {
    index: usize,
    world: Vector3<f64>,
    image: PixelCoord,
    weight: f64,
}

/// Correspondences for frame `t`: the point of each pixel in frame `t − 1`
/// coordinates, and its image in frame `t` from the flow sampled at the
/// track position in frame `t − 1`.
fn correspondences(view: &BatchView, t: usize, depth: &DepthMap, rigidness: &[f64]) -> Vec<Option<Correspondence>> {
    let (w, h) = (depth.width(), depth.height());
    let chain_prev = view.chain[t - 1];
    let flow = &view.flows[t - 1];
    (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if !depth.is_valid(x, y) {
                return None;
            }
            let world = chain_prev.transform(&view.k.back_project(PixelCoord::new(x as f64, y as f64), depth.get(x, y)));
            let prev = view.k.project_point(&world)?;
            let v = flow.sample(prev)?;
            Some(Correspondence {
                index: i,
                world,
                image: prev.offset(v),
                weight: rigidness[i].clamp(0.0, 1.0),
            })
        })
        .collect()
}

fn pick_candidate(candidates: Vec<Pose>, check: &Correspondence, view: &BatchView, prior: Option<&Twist>) -> Pose {
    let scored: Vec<(f64, Pose)> = candidates
        .into_iter()
        .map(|p| {
            let err = match view.k.project_point(&p.transform(&check.world)) {
                Some(q) => (q - check.image).norm(),
                None => f64::INFINITY,
            };
            (err, p)
        })
        .collect();
    let best_err = scored.iter().map(|s| s.0).fold(f64::INFINITY, f64::min);
    let prior_dist = |p: &Pose| prior.map_or(0.0, |tw| (Twist::log(p).0 - tw.0).norm());
    scored
        .into_iter()
        .filter(|(e, _)| *e <= best_err + DISAMBIGUATION_TIE_PX || !best_err.is_finite())
        .map(|(_, p)| p)
        .min_by(|a, b| prior_dist(a).total_cmp(&prior_dist(b)))
        .expect("at least one candidate")
}

/// Draw one P3P hypothesis per strided anchor pixel (frame `t ≥ 1`).
///
/// Each anchor with a usable correspondence is paired with two distinct
/// random usable pixels; a fourth random pixel (and, on ties, the distance
/// to `prior`) selects among the P3P candidates. The weight is the product
/// of the three rigidness values of frame `t`. Groups that are collinear or
/// without a solution are skipped. Each anchor has its own random stream
/// derived from one draw on `rng`.
#[allow(clippy::too_many_arguments)]
pub fn sample_pose_candidates<R: Rng + ?Sized>(
    view: &BatchView,
    t: usize,
    depth: &DepthMap,
    rigidness: &[f64],
    prior: Option<&Twist>,
    stride: usize,
    min_samples: usize,
    rng: &mut R,
) -> Result<Vec<PoseSample>, PoseError> {
    assert!(t >= 1 && t < view.chain.len(), "frame {t} has no chained prior");
    let stride = stride.max(1);
    let corr = correspondences(view, t, depth, rigidness);
    let usable: Vec<Correspondence> = corr.iter().flatten().copied().collect();
    if usable.len() < 4 {
        return Err(PoseError::TooFewSamples { found: 0, required: min_samples });
    }
    let (w, h) = (depth.width(), depth.height());
    let anchors: Vec<Correspondence> = (0..h)
        .step_by(stride)
        .flat_map(|y| (0..w).step_by(stride).map(move |x| y * w + x))
        .filter_map(|i| corr[i])
        .collect();
    let seed: u64 = rng.random();

    let samples: Vec<PoseSample> = anchors
        .par_iter()
        .enumerate()
        .filter_map(|(a, anchor)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(a as u64);
            let mut pick = || loop {
                let c = usable[rng.random_range(0..usable.len())];
                if c.index != anchor.index {
                    break c;
                }
            };
            let second = pick();
            let third = loop {
                let c = pick();
                if c.index != second.index {
                    break c;
                }
            };
            let check = loop {
                let c = pick();
                if c.index != second.index && c.index != third.index {
                    break c;
                }
            };
            let group = [*anchor, second, third];
            let world = group.map(|c| c.world);
            let image = group.map(|c| c.image);
            let candidates = solve_p3p(&world, &image, view.k).ok()?;
            let pose = pick_candidate(candidates, &check, view, prior);
            let twist = Twist::log(&pose);
            twist.is_finite().then(|| PoseSample {
                twist,
                weight: group.iter().map(|c| c.weight).product(),
            })
        })
        .collect();
    if samples.len() < min_samples {
        return Err(PoseError::TooFewSamples {
            found: samples.len(),
            required: min_samples,
        });
    }
    Ok(samples)
}
