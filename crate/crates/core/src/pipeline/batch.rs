use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{BatchConfig, BatchError};
use crate::depth::{score_map, update_depth_map, update_rigidness, BatchView, DepthMap, InverseDepthRange, RigidnessMaps};
use crate::flow::FlowField;
use crate::geometry::{epipolar_bootstrap, triangulate, Intrinsics, PixelCoord, Pose, Twist};
use crate::pose::update_pose;

/// Progress of one GEM iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    /// Largest twist norm of `T_new ∘ T_old⁻¹` over the batch.
    pub max_pose_change: f64,
    /// Mean of the unsmoothed rigidness maps after the iteration.
    pub mean_rigidness: f64,
    /// Mean depth score before and after the depth update (same poses and
    /// rigidness, so `after ≥ before`).
    pub score_before: f64,
    pub score_after: f64,
}

#[derive(Clone, Debug)]
pub struct BatchResult {
    /// Relative motions `T_1..T_N`.
    pub poses: Vec<Pose>,
    /// Depth of the first frame of the batch.
    pub depth: DepthMap,
    /// Unsmoothed rigidness, one map per flow.
    pub rigidness: RigidnessMaps,
    /// Smoothed rigidness used by the last depth update.
    pub smoothed_rigidness: RigidnessMaps,
    pub diagnostics: Vec<IterationDiagnostics>,
    /// `T_1` came from the epipolar bootstrap rather than a prior.
    pub bootstrapped: bool,
    pub converged: bool,
}

/// Run one batch with a generator seeded from `config.seed`.
pub fn run_batch(
    flows: &[FlowField],
    k: &Intrinsics,
    config: &BatchConfig,
    prior_t1: Option<&Pose>,
) -> Result<BatchResult, BatchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    run_batch_with_rng(flows, k, config, prior_t1, &mut rng)
}

fn check_input(flows: &[FlowField]) -> Result<(), BatchError> {
    let first = flows
        .first()
        .ok_or_else(|| BatchError::InvalidInput("a batch needs at least one flow".into()))?;
    if first.is_empty() {
        return Err(BatchError::InvalidInput("empty flow field".into()));
    }
    if flows.iter().any(|f| !f.same_shape(first)) {
        return Err(BatchError::InvalidInput("flow fields differ in size".into()));
    }
    Ok(())
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    Some(*m)
}

fn initial_t1<R: Rng + ?Sized>(
    flow: &FlowField,
    k: &Intrinsics,
    config: &BatchConfig,
    rng: &mut R,
) -> Result<Pose, BatchError> {
    let mags: Vec<f64> = (0..flow.height())
        .flat_map(|y| (0..flow.width()).map(move |x| (x, y)))
        .filter(|&(x, y)| flow.is_valid(x, y))
        .map(|(x, y)| flow.get(x, y).norm())
        .filter(|m| m.is_finite())
        .collect();
    let median_px = median(mags).unwrap_or(0.0);
    if median_px < config.min_flow_px {
        return Err(BatchError::DegenerateMotion { median_px });
    }
    epipolar_bootstrap(flow, k, config.bootstrap_stride, rng)
        .map(|b| b.pose)
        .map_err(BatchError::BootstrapFailed)
}

/// Two-view depth of every pixel from `X_1` and `T_1`; pixels that do not
/// triangulate in front of both cameras get the median, and all depths are
/// clamped to the candidate range around that median.
fn initial_depth(
    flow: &FlowField,
    k: &Intrinsics,
    t1: &Pose,
    min_fraction: f64,
) -> Result<(DepthMap, InverseDepthRange), BatchError> {
    let (w, h) = (flow.width(), flow.height());
    let raw: Vec<Option<f64>> = (0..w * h)
        .into_par_iter()
        .map(|i| {
            let (x, y) = (i % w, i / w);
            if !flow.is_valid(x, y) {
                return None;
            }
            let p = PixelCoord::new(x as f64, y as f64);
            let tri = triangulate(k, t1, p, p.offset(flow.get(x, y))).ok()?;
            (tri.depth > 0.0 && tri.depth_second > 0.0 && tri.depth.is_finite()).then_some(tri.depth)
        })
        .collect();
    let good: Vec<f64> = raw.iter().flatten().copied().collect();
    let required = ((min_fraction * (w * h) as f64).ceil() as usize).max(1);
    if good.len() < required {
        return Err(BatchError::TooFewTriangulated {
            valid: good.len(),
            required,
        });
    }
    let med = median(good).expect("non-empty");
    let range = InverseDepthRange::around_median(med);
    let (lo, hi) = (1.0 / range.max_inverse, 1.0 / range.min_inverse);
    let data = raw.into_iter().map(|d| d.unwrap_or(med).clamp(lo, hi)).collect();
    Ok((DepthMap::from_vec(w, h, data), range))
}

fn mean_valid(scores: &[f64]) -> f64 {
    let (s, n) = scores
        .iter()
        .filter(|v| v.is_finite())
        .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// The alternating estimation of one batch of flows `X_1..X_N`.
///
/// `T_1` is `prior_t1` when given, otherwise the epipolar bootstrap of `X_1`
/// (unit translation). The remaining poses start equal to `T_1`, the depth
/// map is triangulated from `X_1`, and rigidness starts at one. Each
/// iteration updates every pose in order, then smoothed rigidness, depth
/// and unsmoothed rigidness.
pub fn run_batch_with_rng<R: Rng + ?Sized>(
    flows: &[FlowField],
    k: &Intrinsics,
    config: &BatchConfig,
    prior_t1: Option<&Pose>,
    rng: &mut R,
) -> Result<BatchResult, BatchError> {
    config.validate()?;
    check_input(flows)?;
    let n = flows.len();
    let (w, h) = (flows[0].width(), flows[0].height());

    let (t1, bootstrapped) = match prior_t1 {
        Some(p) if p.is_finite() => (*p, false),
        Some(_) => return Err(BatchError::InvalidInput("prior pose is not finite".into())),
        None => (initial_t1(&flows[0], k, config, rng)?, true),
    };
    let (mut depth, range) = initial_depth(&flows[0], k, &t1, config.min_triangulated_fraction)?;
    let model = config.observation_model();
    let mut poses = vec![t1; n];
    let mut rigidness = RigidnessMaps::ones(w, h, n);
    let mut smoothed = rigidness.clone();
    let mut diagnostics = Vec::with_capacity(config.max_iters);
    let mut converged = false;

    for iteration in 1..=config.max_iters {
        let old = poses.clone();
        for t in 1..=n {
            let view = BatchView::new(k, flows, &poses, &model);
            let prior = poses[t - 1];
            let pose = update_pose(&view, t, &depth, rigidness.frame(t - 1), Some(&prior), &config.pose, rng)
                .map_err(|source| BatchError::Pose { frame: t, source })?;
            if !pose.is_finite() {
                return Err(BatchError::Diverged);
            }
            poses[t - 1] = pose;
        }
        let view = BatchView::new(k, flows, &poses, &model);
        smoothed = update_rigidness(&view, &depth, config.gamma, true);
        let score_before = mean_valid(&score_map(&view, &depth, &smoothed, config.score));
        let update = update_depth_map(&view, &depth, &smoothed, config.score, &range, rng);
        let score_after = update.mean_score();
        depth = update.depth;
        rigidness = update_rigidness(&view, &depth, config.gamma, false);

        let max_pose_change = poses
            .iter()
            .zip(&old)
            .map(|(new, old)| Twist::log(&new.compose(&old.inverse())).norm())
            .fold(0.0, f64::max);
        let mean_rigidness = rigidness.mean_all();
        if !max_pose_change.is_finite() || !mean_rigidness.is_finite() || depth.valid_count() == 0 {
            return Err(BatchError::Diverged);
        }
        diagnostics.push(IterationDiagnostics {
            iteration,
            max_pose_change,
            mean_rigidness,
            score_before,
            score_after,
        });
        if max_pose_change < config.convergence_eps {
            converged = true;
            break;
        }
    }

    Ok(BatchResult {
        poses,
        depth,
        rigidness,
        smoothed_rigidness: smoothed,
        diagnostics,
        bootstrapped,
        converged,
    })
}
