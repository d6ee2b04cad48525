use super::EvalError;
use crate::depth::DepthMap;
use crate::io::DisparityMap;

/// Disparity errors above this many pixels can be outliers.
pub const OUTLIER_PX: f64 = 3.0;
/// ... and above this fraction of the true disparity.
pub const OUTLIER_RELATIVE: f64 = 0.05;

/// An error counts as an outlier only when it exceeds both thresholds.
pub fn is_disparity_outlier(estimate: f64, truth: f64) -> bool {
    let e = (estimate - truth).abs();
    e > OUTLIER_PX && e > OUTLIER_RELATIVE * truth
}

/// Statistics over pixels whose summed rigidness exceeds `threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthBucket {
    pub threshold: f64,
    /// Pixels in the bucket with valid estimate and ground truth.
    pub count: usize,
    /// `count` as a fraction of all pixels with valid ground truth.
    pub density: f64,
    /// Mean absolute disparity error, pixels.
    pub epe: f64,
    /// Percentage of bucket pixels that are outliers.
    pub outlier_pct: f64,
}

/// Disparities `s/θ` with `s` the median of `d_gt·θ` over pixels valid in
/// both, so the estimate's unknown scale matches the ground truth.
pub fn align_disparity(depth: &DepthMap, truth: &DisparityMap) -> Result<Vec<Option<f64>>, EvalError> {
    if depth.width() != truth.width || depth.height() != truth.height {
        return Err(EvalError::DimensionMismatch(format!(
            "{}×{} depth against {}×{} disparity",
            depth.width(),
            depth.height(),
            truth.width,
            truth.height
        )));
    }
    let both = |i: usize| depth.validity()[i] && truth.valid[i];
    let mut ratios: Vec<f64> = (0..depth.len())
        .filter(|&i| both(i))
        .map(|i| truth.values[i] * depth.data()[i])
        .collect();
    if ratios.is_empty() {
        return Err(EvalError::TooShort("no pixel has both depth and ground truth".into()));
    }
    let mid = ratios.len() / 2;
    let (_, s, _) = ratios.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    let s = *s;
    Ok((0..depth.len())
        .map(|i| depth.validity()[i].then(|| s / depth.data()[i]))
        .collect())
}

/// Disparity accuracy per rigidness bucket: pixel `j` belongs to bucket `k`
/// when its rigidness sum `Σ_t W_t(j)` (see
/// [`RigidnessMaps::pixel_sums`](crate::depth::RigidnessMaps::pixel_sums))
/// exceeds `k`, for each `k` in `thresholds`.
pub fn depth_metrics(
    depth: &DepthMap,
    truth: &DisparityMap,
    rigidness_sums: &[f64],
    thresholds: &[f64],
) -> Result<Vec<DepthBucket>, EvalError> {
    if rigidness_sums.len() != depth.len() {
        return Err(EvalError::DimensionMismatch("rigidness sums differ from the depth map".into()));
    }
    let aligned = align_disparity(depth, truth)?;
    let sums = rigidness_sums;
    let gt_valid = truth.valid.iter().filter(|v| **v).count();
    Ok(thresholds
        .iter()
        .map(|&threshold| {
            let (mut count, mut err, mut outliers) = (0usize, 0.0, 0usize);
            for i in 0..depth.len() {
                let Some(d) = aligned[i] else { continue };
                if !truth.valid[i] || sums[i] <= threshold {
                    continue;
                }
                count += 1;
                err += (d - truth.values[i]).abs();
                outliers += is_disparity_outlier(d, truth.values[i]) as usize;
            }
            let frac = |a: f64, b: usize| if b == 0 { 0.0 } else { a / b as f64 };
            DepthBucket {
                threshold,
                count,
                density: frac(count as f64, gt_valid),
                epe: frac(err, count),
                outlier_pct: 100.0 * frac(outliers as f64, count),
            }
        })
        .collect())
}
