//! Per-frame pose update: weighted P3P hypotheses and their kernel-density
//! mode in twist coordinates.

mod meanshift;
mod sample;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use meanshift::{
    kernel_density, meanshift_mode, meanshift_trace, KernelCovariance, MEANSHIFT_MAX_ITERS, MEANSHIFT_TOLERANCE,
    PRUNE_RADIUS,
};
pub use sample::sample_pose_candidates;

use crate::depth::{BatchView, DepthMap};
use crate::geometry::{Pose, Twist};

/// One pose hypothesis and its rigidness weight in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSample {
    pub twist: Twist,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PoseError {
    #[error("too few pose samples: {found} (need {required})")]
    TooFewSamples { found: usize, required: usize },
    #[error("all pose samples have zero weight")]
    ZeroWeight,
}

/// Knobs of the pose update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseConfig {
    pub stride: usize,
    pub kernel: KernelCovariance,
    pub seeds: usize,
    pub min_samples: usize,
}

impl Default for PoseConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            kernel: KernelCovariance::default(),
            seeds: 8,
            min_samples: 64,
        }
    }
}

/// Re-estimate the relative motion `T_t` (`t ≥ 1`) given the chained poses
/// of frames before it in `view`. `prior` (usually the current estimate of
/// `T_t`) only breaks ties between P3P candidates.
pub fn update_pose<R: Rng + ?Sized>(
    view: &BatchView,
    t: usize,
    depth: &DepthMap,
    rigidness: &[f64],
    prior: Option<&Pose>,
    config: &PoseConfig,
    rng: &mut R,
) -> Result<Pose, PoseError> {
    let prior_twist = prior.map(Twist::log);
    let samples = sample_pose_candidates(
        view,
        t,
        depth,
        rigidness,
        prior_twist.as_ref(),
        config.stride,
        config.min_samples,
        rng,
    )?;
    let mode = meanshift_mode(&samples, &config.kernel, config.seeds)?;
    Ok(mode.exp())
}
