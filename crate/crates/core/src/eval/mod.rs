//! Trajectory, depth and flow evaluation.

mod depth;
mod odometry;

use thiserror::Error;

pub use depth::{align_disparity, depth_metrics, is_disparity_outlier, DepthBucket, OUTLIER_PX, OUTLIER_RELATIVE};
pub use odometry::{kitti_metrics, rigid_align, segment_ate, KittiMetrics, SegmentError, KITTI_LENGTHS};

use crate::flow::FlowField;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("trajectories differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("sequence too short: {0}")]
    TooShort(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// `(‖X‖, ‖X − X_gt‖)` for every pixel valid in both fields, where `X` is
/// the estimated flow; the input of residual-model calibration.
pub fn flow_residuals(estimate: &FlowField, truth: &FlowField) -> Result<Vec<(f64, f64)>, EvalError> {
    if !estimate.same_shape(truth) {
        return Err(EvalError::DimensionMismatch(format!(
            "{}×{} flow against {}×{} ground truth",
            estimate.width(),
            estimate.height(),
            truth.width(),
            truth.height()
        )));
    }
    let w = estimate.width();
    Ok((0..estimate.len())
        .filter(|&i| estimate.is_valid(i % w, i / w) && truth.is_valid(i % w, i / w))
        .map(|i| {
            let (a, b) = (estimate.get(i % w, i / w), truth.get(i % w, i / w));
            (a.norm(), (a - b).norm())
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn residuals_skip_invalid_pixels() {
        let est = FlowField::new(2, 1, vec![[3.0, 4.0], [1.0, 0.0]]);
        let gt = FlowField::with_validity(2, 1, vec![[3.0, 3.0], [0.0, 0.0]], vec![true, false]);
        assert_eq!(flow_residuals(&est, &gt).unwrap(), vec![(5.0, 1.0)]);
        assert!(flow_residuals(&est, &FlowField::zeros(1, 1)).is_err());
    }
}
