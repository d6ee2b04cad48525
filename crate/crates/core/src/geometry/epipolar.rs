//! Two-view bootstrap: essential matrix by least-median-of-squares over
//! minimal 8-point fits, followed by cheirality-checked decomposition.

use nalgebra::{Matrix3, SMatrix, SymmetricEigen, Vector2, Vector3};
use rand::seq::index::sample;
use rand::Rng;

use super::{triangulate_rays, GeometryError, Intrinsics, PixelCoord, Pose};
use crate::flow::FlowField;

/// Minimal fits drawn by the robust search.
pub const LMEDS_TRIALS: usize = 256;
/// Correspondences used for the cheirality vote.
pub const CHEIRALITY_SAMPLES: usize = 64;
/// Minimum correspondences for a bootstrap.
pub const MIN_CORRESPONDENCES: usize = 200;
/// Largest accepted median Sampson error, in pixels (converted with `fx`).
pub const MAX_MEDIAN_ERROR_PX: f64 = 1.0;
/// Cap on the number of correspondences scored per trial.
const MAX_SCORED: usize = 2000;

/// Normalized-coordinate correspondence `(x0, x1)` with `x1ᵀ E x0 = 0`.
pub type Correspondence = (Vector2<f64>, Vector2<f64>);

/// Outcome of [`epipolar_bootstrap`].
#[derive(Clone, Debug)]
pub struct Bootstrap {
    /// Relative motion frame 0 → frame 1 with unit-norm translation.
    pub pose: Pose,
    pub essential: Matrix3<f64>,
    /// Best median Sampson error (normalized coordinates, squared units).
    pub median_error: f64,
    pub inliers: usize,
    pub correspondences: usize,
}

/// Estimate the first relative motion of a batch from one flow field.
pub fn epipolar_bootstrap<R: Rng + ?Sized>(
    flow: &FlowField,
    k: &Intrinsics,
    stride: usize,
    rng: &mut R,
) -> Result<Bootstrap, GeometryError> {
    let stride = stride.max(1);
    let mut corr: Vec<Correspondence> = Vec::new();
    for y in (0..flow.height()).step_by(stride) {
        for x in (0..flow.width()).step_by(stride) {
            if !flow.is_valid(x, y) {
                continue;
            }
            let v = flow.get(x, y);
            if !(v.x.is_finite() && v.y.is_finite()) {
                continue;
            }
            let p0 = PixelCoord::new(x as f64, y as f64);
            let a = k.unproject(p0);
            let b = k.unproject(p0.offset(v));
            corr.push((Vector2::new(a.x, a.y), Vector2::new(b.x, b.y)));
        }
    }
    if corr.len() < MIN_CORRESPONDENCES {
        return Err(GeometryError::TooFewCorrespondences(corr.len()));
    }
    let threshold = (MAX_MEDIAN_ERROR_PX / k.fx).powi(2);
    lmeds_essential(&corr, threshold, rng)
}

/// Robust essential-matrix estimation and decomposition on normalized
/// correspondences.
pub fn lmeds_essential<R: Rng + ?Sized>(
    corr: &[Correspondence],
    max_median: f64,
    rng: &mut R,
) -> Result<Bootstrap, GeometryError> {
    let n = corr.len();
    if n < 8 {
        return Err(GeometryError::TooFewCorrespondences(n));
    }
    let scored: Vec<Correspondence> = if n > MAX_SCORED {
        sample(rng, n, MAX_SCORED).into_iter().map(|i| corr[i]).collect()
    } else {
        corr.to_vec()
    };

    let mut best: Option<(Matrix3<f64>, f64)> = None;
    let mut buf = Vec::with_capacity(scored.len());
    for _ in 0..LMEDS_TRIALS {
        let idx = sample(rng, n, 8);
        let minimal: Vec<Correspondence> = idx.into_iter().map(|i| corr[i]).collect();
        let Some(e) = eight_point(&minimal) else { continue };
        let med = median_sampson(&e, &scored, &mut buf);
        if best.as_ref().is_none_or(|(_, m)| med < *m) {
            best = Some((e, med));
        }
    }
    let Some((mut e, mut med)) = best else {
        return Err(GeometryError::DegenerateMotion);
    };
    if !(med <= max_median) {
        return Err(GeometryError::DegenerateMotion);
    }

    // Rousseeuw's robust scale estimate selects the inliers for a final refit.
    let sigma = 1.4826 * (1.0 + 5.0 / (n as f64 - 8.0).max(1.0)) * med.sqrt();
    let cutoff = (2.5 * sigma).powi(2).max(1e-24);
    let inliers: Vec<Correspondence> = corr
        .iter()
        .copied()
        .filter(|c| sampson_error(&e, c) <= cutoff)
        .collect();
    if inliers.len() >= 8 {
        if let Some(refit) = eight_point(&inliers) {
            let refit_med = median_sampson(&refit, &scored, &mut buf);
            if refit_med <= med {
                e = refit;
                med = refit_med;
            }
        }
    }
    let inlier_count = corr.iter().filter(|c| sampson_error(&e, c) <= cutoff).count();

    let support: Vec<Correspondence> = {
        let pool: Vec<Correspondence> = corr
            .iter()
            .copied()
            .filter(|c| sampson_error(&e, c) <= cutoff)
            .collect();
        let pool = if pool.len() >= 8 { pool } else { corr.to_vec() };
        let take = CHEIRALITY_SAMPLES.min(pool.len());
        sample(rng, pool.len(), take).into_iter().map(|i| pool[i]).collect()
    };
    let pose = decompose_essential(&e, &support)?;
    Ok(Bootstrap {
        pose,
        essential: e,
        median_error: med,
        inliers: inlier_count,
        correspondences: n,
    })
}

/// Linear 8-point (or more) essential estimate with Hartley normalization,
/// projected onto the essential manifold. `None` when the design matrix has a
/// multi-dimensional null space (no parallax, pure rotation, repeated points).
pub fn eight_point(corr: &[Correspondence]) -> Option<Matrix3<f64>> {
    let n = corr.len();
    if n < 8 {
        return None;
    }
    let (t0, t1) = (normalizer(corr.iter().map(|c| c.0)), normalizer(corr.iter().map(|c| c.1)));
    let mut ata = SMatrix::<f64, 9, 9>::zeros();
    for (a, b) in corr {
        let p = t0 * Vector3::new(a.x, a.y, 1.0);
        let q = t1 * Vector3::new(b.x, b.y, 1.0);
        let row = SMatrix::<f64, 9, 1>::from_column_slice(&[
            q.x * p.x,
            q.x * p.y,
            q.x,
            q.y * p.x,
            q.y * p.y,
            q.y,
            p.x,
            p.y,
            1.0,
        ]);
        ata += row * row.transpose();
    }
    let eig = SymmetricEigen::new(ata);
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].partial_cmp(&eig.eigenvalues[j]).unwrap());
    let largest = eig.eigenvalues[order[8]];
    if !(largest > 0.0) || eig.eigenvalues[order[1]] < 1e-10 * largest {
        return None;
    }
    let v = eig.eigenvectors.column(order[0]);
    let en = Matrix3::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]);
    let e = t1.transpose() * en * t0;
    project_to_essential(&e)
}

fn normalizer(points: impl Iterator<Item = Vector2<f64>> + Clone) -> Matrix3<f64> {
    let n = points.clone().count() as f64;
    let mean = points.clone().fold(Vector2::zeros(), |acc, p| acc + p) / n;
    let spread = points.map(|p| (p - mean).norm()).sum::<f64>() / n;
    let s = if spread > 1e-15 {
        std::f64::consts::SQRT_2 / spread
    } else {
        1.0
    };
    Matrix3::new(s, 0.0, -s * mean.x, 0.0, s, -s * mean.y, 0.0, 0.0, 1.0)
}

fn project_to_essential(e: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = e.svd(true, true);
    let (u, vt) = (svd.u?, svd.v_t?);
    let s = svd.singular_values;
    let mut idx = [0usize, 1, 2];
    idx.sort_by(|&i, &j| s[j].partial_cmp(&s[i]).unwrap());
    let mean = 0.5 * (s[idx[0]] + s[idx[1]]);
    if !(mean > 0.0) {
        return None;
    }
    let mut d = Matrix3::zeros();
    d[(idx[0], idx[0])] = 1.0;
    d[(idx[1], idx[1])] = 1.0;
    let out = u * d * vt;
    let norm = out.norm();
    Some(out / norm)
}

/// First-order geometric (Sampson) error of a normalized correspondence.
pub fn sampson_error(e: &Matrix3<f64>, c: &Correspondence) -> f64 {
    let x0 = Vector3::new(c.0.x, c.0.y, 1.0);
    let x1 = Vector3::new(c.1.x, c.1.y, 1.0);
    let ex0 = e * x0;
    let etx1 = e.transpose() * x1;
    let num = x1.dot(&ex0);
    let den = ex0.x * ex0.x + ex0.y * ex0.y + etx1.x * etx1.x + etx1.y * etx1.y;
    if den <= 0.0 {
        return f64::INFINITY;
    }
    num * num / den
}

fn median_sampson(e: &Matrix3<f64>, corr: &[Correspondence], buf: &mut Vec<f64>) -> f64 {
    buf.clear();
    buf.extend(corr.iter().map(|c| sampson_error(e, c)));
    let mid = buf.len() / 2;
    let (_, m, _) = buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Split `E = [t]× R` into the four `(R, ±t)` hypotheses and keep the one with
/// the most correspondences triangulating in front of both cameras.
pub fn decompose_essential(e: &Matrix3<f64>, support: &[Correspondence]) -> Result<Pose, GeometryError> {
    let svd = e.svd(true, true);
    let (mut u, mut vt) = match (svd.u, svd.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => return Err(GeometryError::DegenerateMotion),
    };
    // Order singular vectors so that the null direction is last.
    let s = svd.singular_values;
    let null = (0..3).min_by(|&i, &j| s[i].partial_cmp(&s[j]).unwrap()).unwrap();
    if null != 2 {
        u.swap_columns(null, 2);
        vt.swap_rows(null, 2);
    }
    if u.determinant() < 0.0 {
        u = -u;
    }
    if vt.determinant() < 0.0 {
        vt = -vt;
    }
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let r1 = u * w * vt;
    let r2 = u * w.transpose() * vt;
    let t: Vector3<f64> = u.column(2).into_owned().normalize();
    let candidates = [
        Pose::new(r1, t),
        Pose::new(r1, -t),
        Pose::new(r2, t),
        Pose::new(r2, -t),
    ];
    let mut votes: Vec<(usize, usize)> = candidates
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            let count = support
                .iter()
                .filter(|(a, b)| {
                    let ra = Vector3::new(a.x, a.y, 1.0);
                    let rb = Vector3::new(b.x, b.y, 1.0);
                    matches!(triangulate_rays(pose, &ra, &rb), Ok(tri) if tri.depth > 0.0 && tri.depth_second > 0.0)
                })
                .count();
            (count, i)
        })
        .collect();
    votes.sort_by(|a, b| b.cmp(a));
    let (best, best_idx) = votes[0];
    let second = votes[1].0;
    if best * 2 < support.len() || second as f64 >= 0.7 * best as f64 {
        return Err(GeometryError::DegenerateMotion);
    }
    Ok(candidates[best_idx])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Twist};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(200.0, 200.0, 128.0, 96.0).unwrap()
    }

    fn synthetic_flow(pose: &Pose, depth_at: impl Fn(usize, usize) -> f64) -> FlowField {
        let k = k();
        FlowField::from_fn(256, 192, |x, y| {
            let p = PixelCoord::new(x as f64, y as f64);
            let q = project(&k, pose, p, depth_at(x, y)).unwrap().pixel;
            let d = q - p;
            [d.x as f32, d.y as f32]
        })
    }

    fn truth() -> Pose {
        Twist::new(Vector3::new(0.1, -0.05, -0.8), Vector3::new(0.01, -0.02, 0.005)).exp()
    }

    fn depth(x: usize, y: usize) -> f64 {
        4.0 + 3.0 * ((x as f64) * 0.05).sin() + 0.02 * y as f64
    }

    fn errors(est: &Pose, gt: &Pose) -> (f64, f64) {
        let (dr, _) = est.distance(gt);
        let cos = est.translation.normalize().dot(&gt.translation.normalize()).clamp(-1.0, 1.0);
        (dr, cos.acos())
    }

    #[test]
    fn noiseless_rigid_flow() {
        let gt = truth();
        // Flow stored as f32; exact-flow tolerance is set by that quantization.
        let flow = synthetic_flow(&gt, depth);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = epipolar_bootstrap(&flow, &k(), 4, &mut rng).unwrap();
        assert!((b.pose.translation.norm() - 1.0).abs() < 1e-12);
        let (er, et) = errors(&b.pose, &gt);
        assert!(er < 1e-4, "rotation error {er}");
        assert!(et < 1e-3, "translation direction error {et}");
    }

    #[test]
    fn tolerates_twenty_percent_outliers() {
        let gt = truth();
        let mut flow = synthetic_flow(&gt, depth);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for v in flow.data_mut() {
            if rng.random::<f64>() < 0.2 {
                *v = [rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)];
            }
        }
        let b = epipolar_bootstrap(&flow, &k(), 4, &mut rng).unwrap();
        let (er, et) = errors(&b.pose, &gt);
        assert!(er < 1e-3, "rotation error {er}");
        assert!(et < 1e-2, "translation direction error {et}");
    }

    #[test]
    fn zero_flow_is_degenerate() {
        let flow = FlowField::zeros(256, 192);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!(matches!(
            epipolar_bootstrap(&flow, &k(), 4, &mut rng),
            Err(GeometryError::DegenerateMotion)
        ));
    }

    #[test]
    fn too_few_correspondences() {
        let flow = FlowField::zeros(20, 20);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            epipolar_bootstrap(&flow, &k(), 4, &mut rng),
            Err(GeometryError::TooFewCorrespondences(25))
        ));
    }
}
