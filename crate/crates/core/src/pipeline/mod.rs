//! Batch GEM loop, sliding-window sequences and ground-plane scale.

mod batch;
mod ground;
mod sequence;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{run_batch, run_batch_with_rng, BatchResult, IterationDiagnostics};
pub use ground::{estimate_ground_scale, GroundConfig, GroundError};
pub use sequence::{run_sequence, run_sequence_with, BatchRecord, FlowSource, SequenceError, SequenceResult};

use crate::depth::ScoreKind;
use crate::geometry::GeometryError;
use crate::pose::{PoseConfig, PoseError};
use crate::residual::{ObservationModel, ResidualKind, ResidualModel};

/// Everything that controls one batch and the sequence driver.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchConfig {
    /// Flow fields per batch.
    pub window_size: usize,
    /// Residual constants, including the outlier ratio λ.
    pub residual: ResidualModel,
    pub residual_kind: ResidualKind,
    pub score: ScoreKind,
    /// Probability that rigidness persists between neighbouring pixels.
    pub gamma: f64,
    pub pose: PoseConfig,
    pub max_iters: usize,
    /// Stop once no pose twist changes by more than this.
    pub convergence_eps: f64,
    /// Pixel stride of the epipolar bootstrap correspondences.
    pub bootstrap_stride: usize,
    /// Median flow magnitude (pixels) below which the first flow is treated
    /// as carrying no translation.
    pub min_flow_px: f64,
    /// Fraction of pixels that must triangulate for the initial depth map.
    pub min_triangulated_fraction: f64,
    /// Metric camera height above the ground; enables ground-plane scaling.
    pub camera_height: Option<f64>,
    pub ground: GroundConfig,
    pub seed: u64,
}

impl Default for BatchConfig {
    fn default() -> Self {
        Self {
            window_size: 6,
            residual: ResidualModel::KITTI,
            residual_kind: ResidualKind::Fisk,
            score: ScoreKind::Mie,
            gamma: 0.9,
            pose: PoseConfig::default(),
            max_iters: 5,
            convergence_eps: 1e-4,
            bootstrap_stride: 4,
            min_flow_px: 0.05,
            min_triangulated_fraction: 0.05,
            camera_height: None,
            ground: GroundConfig::default(),
            seed: 0,
        }
    }
}

impl BatchConfig {
    pub fn validate(&self) -> Result<(), BatchError> {
        let bad = |m: &str| Err(BatchError::InvalidInput(m.to_string()));
        if self.window_size < 1 {
            return bad("window_size must be at least 1");
        }
        if self.residual.validate().is_err() {
            return bad("residual constants are invalid");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive");
        }
        if !(self.convergence_eps > 0.0) {
            return bad("convergence_eps must be positive");
        }
        if !self.pose.kernel.is_valid() || self.pose.seeds == 0 {
            return bad("pose kernel covariance and seed count must be positive");
        }
        if !(self.min_flow_px >= 0.0) || !(0.0..=1.0).contains(&self.min_triangulated_fraction) {
            return bad("min_flow_px and min_triangulated_fraction out of range");
        }
        if let Some(h) = self.camera_height {
            if !(h > 0.0 && h.is_finite()) {
                return bad("camera_height must be positive");
            }
        }
        self.ground.validate().map_err(|e| BatchError::InvalidInput(e.to_string()))
    }

    pub fn observation_model(&self) -> ObservationModel {
        match self.residual_kind {
            ResidualKind::Fisk => ObservationModel::fisk(self.residual),
            ResidualKind::Gaussian => ObservationModel::gaussian(self.residual),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BatchError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bootstrap failed: {0}")]
    BootstrapFailed(GeometryError),
    #[error("bootstrap failed: median flow {median_px:.3} px is too small to estimate motion")]
    DegenerateMotion { median_px: f64 },
    #[error("bootstrap failed: only {valid} pixels triangulated (need {required})")]
    TooFewTriangulated { valid: usize, required: usize },
    #[error("pose update of frame {frame} failed: {source}")]
    Pose { frame: usize, source: PoseError },
    #[error("estimation diverged (non-finite state)")]
    Diverged,
}

impl BatchError {
    /// Failures caused by the numbers rather than by malformed input.
    pub fn is_numerical(&self) -> bool {
        !matches!(self, BatchError::InvalidInput(_))
    }
}
