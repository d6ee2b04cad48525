use nalgebra::{Matrix3, Vector3};

use super::EvalError;
use crate::geometry::Pose;
use crate::trajectory::Trajectory;

/// Segment lengths (metres of ground-truth path) of the KITTI benchmark.
pub const KITTI_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// Error of one sub-sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentError {
    pub first: usize,
    pub length: f64,
    /// Ground-truth path length actually covered by the segment.
    pub distance: f64,
    /// Translation error as a fraction of `distance`.
    pub translation: f64,
    /// Rotation error in degrees per metre of `distance`.
    pub rotation: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KittiMetrics {
    /// Mean translation error, percent.
    pub translation_pct: f64,
    /// Mean rotation error, degrees per metre.
    pub rotation_deg_per_m: f64,
    pub segments: Vec<SegmentError>,
}

impl KittiMetrics {
    /// Means over the segments of one nominal length.
    pub fn by_length(&self, length: f64) -> Option<(f64, f64)> {
        let s: Vec<&SegmentError> = self.segments.iter().filter(|s| s.length == length).collect();
        if s.is_empty() {
            return None;
        }
        let n = s.len() as f64;
        Some((
            100.0 * s.iter().map(|e| e.translation).sum::<f64>() / n,
            s.iter().map(|e| e.rotation).sum::<f64>() / n,
        ))
    }
}

fn check_lengths(traj: &Trajectory, gt: &Trajectory) -> Result<(), EvalError> {
    if traj.len() != gt.len() {
        return Err(EvalError::LengthMismatch(traj.len(), gt.len()));
    }
    Ok(())
}

/// Sub-sequence errors in the style of the KITTI odometry devkit.
///
/// For every `step`-th start frame and every length, the segment ends at the
/// first frame whose ground-truth path distance exceeds the start's by the
/// length. The error pose `(E_a⁻¹ E_b)⁻¹ (G_a⁻¹ G_b)` gives the translation
/// error and the rotation angle, both divided by the path distance the
/// segment actually covers. Means are over all segments of all lengths.
pub fn kitti_metrics(
    traj: &Trajectory,
    gt: &Trajectory,
    lengths: &[f64],
    step: usize,
) -> Result<KittiMetrics, EvalError> {
    check_lengths(traj, gt)?;
    let positions = gt.positions();
    let mut dist = vec![0.0; positions.len()];
    for i in 1..positions.len() {
        dist[i] = dist[i - 1] + (positions[i] - positions[i - 1]).norm();
    }
    let mut segments = Vec::new();
    for first in (0..gt.len()).step_by(step.max(1)) {
        for &length in lengths {
            let Some(last) = (first..gt.len()).find(|&j| dist[j] > dist[first] + length) else {
                continue;
            };
            let delta_gt = gt.pose(first).inverse().compose(gt.pose(last));
            let delta_est = traj.pose(first).inverse().compose(traj.pose(last));
            let error = delta_est.inverse().compose(&delta_gt);
            let distance = dist[last] - dist[first];
            segments.push(SegmentError {
                first,
                length,
                distance,
                translation: error.translation.norm() / distance,
                rotation: error.rotation_angle().to_degrees() / distance,
            });
        }
    }
    if segments.is_empty() {
        let total = dist.last().copied().unwrap_or(0.0);
        let shortest = lengths.iter().copied().fold(f64::INFINITY, f64::min);
        return Err(EvalError::TooShort(format!(
            "ground-truth path {total:.3} is not longer than the shortest segment {shortest}"
        )));
    }
    let n = segments.len() as f64;
    Ok(KittiMetrics {
        translation_pct: 100.0 * segments.iter().map(|s| s.translation).sum::<f64>() / n,
        rotation_deg_per_m: segments.iter().map(|s| s.rotation).sum::<f64>() / n,
        segments,
    })
}

/// Rigid transform `g` minimizing `Σ‖g(src_i) − dst_i‖²` (Kabsch via SVD,
/// reflection-corrected).
pub fn rigid_align(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
    assert_eq!(src.len(), dst.len());
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vector3<f64>>() / n;
    let cd = dst.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (a, b) in src.iter().zip(dst) {
        h += (a - cs) * (b - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u"), svd.v_t.expect("v"));
    let mut d = Matrix3::identity();
    if (vt.transpose() * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = vt.transpose() * d * u.transpose();
    Pose::new(r, cd - r * cs)
}

/// Mean over consecutive non-overlapping segments of `segment_len` frames
/// of the position RMSE after rigidly aligning the estimate to the ground
/// truth. A trailing partial segment is ignored.
pub fn segment_ate(traj: &Trajectory, gt: &Trajectory, segment_len: usize) -> Result<f64, EvalError> {
    check_lengths(traj, gt)?;
    if segment_len < 2 {
        return Err(EvalError::TooShort("segments need at least 2 frames".into()));
    }
    if traj.len() < segment_len {
        return Err(EvalError::TooShort(format!(
            "{} frames, segments of {segment_len}",
            traj.len()
        )));
    }
    let (est, truth) = (traj.positions(), gt.positions());
    let rmse: Vec<f64> = est
        .chunks_exact(segment_len)
        .zip(truth.chunks_exact(segment_len))
        .map(|(e, g)| {
            let a = rigid_align(e, g);
            let sq: f64 = e.iter().zip(g).map(|(p, q)| (a.transform(p) - q).norm_squared()).sum();
            (sq / segment_len as f64).sqrt()
        })
        .collect();
    Ok(rmse.iter().sum::<f64>() / rmse.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix4, SymmetricEigen, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn straight_line(n: usize, step: f64) -> Trajectory {
        Trajectory::from_poses((0..n).map(|i| Pose::from_translation(Vector3::new(0.0, 0.0, step * i as f64))).collect())
    }

    fn wiggly(n: usize, seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rel: Vec<Pose> = (0..n - 1)
            .map(|_| {
                Pose::from_rotation_vector(
                    Vector3::new(rng.random_range(-0.01..0.01), rng.random_range(-0.05..0.05), 0.0),
                    Vector3::new(rng.random_range(-0.1..0.1), 0.0, -rng.random_range(0.8..1.2)),
                )
            })
            .collect();
        Trajectory::from_relative(&rel)
    }

    #[test]
    fn identical_trajectories_score_zero() {
        let gt = wiggly(300, 1);
        let m = kitti_metrics(&gt, &gt, &KITTI_LENGTHS, 1).unwrap();
        assert!(m.translation_pct.abs() < 1e-12 && m.rotation_deg_per_m.abs() < 1e-12);
        assert!(segment_ate(&gt, &gt, 6).unwrap() < 1e-9);
    }

    #[test]
    fn scaled_straight_line_is_one_percent() {
        let gt = straight_line(400, 1.3);
        let est = gt.scaled(1.01);
        let m = kitti_metrics(&est, &gt, &KITTI_LENGTHS, 1).unwrap();
        assert!((m.translation_pct - 1.0).abs() < 1e-6, "{}", m.translation_pct);
        assert!(m.rotation_deg_per_m.abs() < 1e-12);
    }

    /// Enumerates every (start, end) pair directly and keeps, per start and
    /// length, the earliest end exceeding the length.
    fn brute_force(traj: &Trajectory, gt: &Trajectory, lengths: &[f64]) -> (f64, f64) {
        let p = gt.positions();
        let path = |a: usize, b: usize| -> f64 { (a..b).map(|i| (p[i + 1] - p[i]).norm()).sum() };
        let (mut t, mut r, mut n) = (0.0, 0.0, 0.0);
        for a in 0..gt.len() {
            for &len in lengths {
                for b in a + 1..gt.len() {
                    let d = path(a, b);
                    if d > len {
                        let g = gt.pose(a).inverse().compose(gt.pose(b));
                        let e = traj.pose(a).inverse().compose(traj.pose(b));
                        let err = e.inverse().compose(&g);
                        t += err.translation.norm() / d;
                        let c = ((err.rotation.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
                        r += c.acos().to_degrees() / d;
                        n += 1.0;
                        break;
                    }
                }
            }
        }
        (100.0 * t / n, r / n)
    }

    #[test]
    fn matches_brute_force_on_toy_trajectories() {
        let gt = Trajectory::from_poses(vec![
            Pose::identity(),
            Pose::from_rotation_vector(Vector3::new(0.0, 0.3, 0.0), Vector3::new(1.0, 0.0, 2.0)),
            Pose::from_rotation_vector(Vector3::new(0.1, 0.5, 0.0), Vector3::new(2.5, 0.2, 3.0)),
        ]);
        let est = Trajectory::from_poses(vec![
            Pose::identity(),
            Pose::from_rotation_vector(Vector3::new(0.0, 0.25, 0.02), Vector3::new(1.1, 0.0, 1.9)),
            Pose::from_rotation_vector(Vector3::new(0.12, 0.45, 0.0), Vector3::new(2.4, 0.3, 3.2)),
        ]);
        let lengths = [1.0, 2.0, 3.0];
        let m = kitti_metrics(&est, &gt, &lengths, 1).unwrap();
        let (t, r) = brute_force(&est, &gt, &lengths);
        assert!((m.translation_pct - t).abs() < 1e-9 && (m.rotation_deg_per_m - r).abs() < 1e-9);

        let gt = wiggly(60, 2);
        let est = wiggly(60, 3);
        let lengths = [5.0, 10.0, 20.0];
        let m = kitti_metrics(&est, &gt, &lengths, 1).unwrap();
        let (t, r) = brute_force(&est, &gt, &lengths);
        assert!((m.translation_pct - t).abs() < 1e-9 && (m.rotation_deg_per_m - r).abs() < 1e-9);
    }

    #[test]
    fn too_short_path() {
        let gt = straight_line(50, 1.0);
        assert!(matches!(kitti_metrics(&gt, &gt, &KITTI_LENGTHS, 1), Err(EvalError::TooShort(_))));
        assert!(matches!(segment_ate(&straight_line(5, 1.0), &straight_line(5, 1.0), 6), Err(EvalError::TooShort(_))));
        assert!(matches!(kitti_metrics(&gt, &straight_line(4, 1.0), &[1.0], 1), Err(EvalError::LengthMismatch(..))));
    }

    #[test]
    fn invariant_to_global_rigid_transform() {
        let gt = wiggly(250, 4);
        let est = Trajectory::from_relative(
            &gt.relative()
                .iter()
                .map(|p| Pose::new(p.rotation, p.translation * 1.03 + Vector3::new(0.01, 0.0, 0.0)))
                .collect::<Vec<_>>(),
        );
        let g = Pose::from_rotation_vector(Vector3::new(0.3, -1.1, 0.7), Vector3::new(5.0, -2.0, 9.0));
        let a = kitti_metrics(&est, &gt, &KITTI_LENGTHS, 1).unwrap();
        let b = kitti_metrics(&est.transformed(&g), &gt.transformed(&g), &KITTI_LENGTHS, 1).unwrap();
        assert!((a.translation_pct - b.translation_pct).abs() < 1e-9);
        assert!((a.rotation_deg_per_m - b.rotation_deg_per_m).abs() < 1e-9);
        let a = segment_ate(&est, &gt, 6).unwrap();
        let b = segment_ate(&est.transformed(&g), &gt.transformed(&g), 6).unwrap();
        assert!((a - b).abs() < 1e-9);
        // Rigidly moving only the estimate is removed by the alignment.
        assert!(segment_ate(&gt.transformed(&g), &gt, 6).unwrap() < 1e-9);
    }

    /// Closed-form absolute orientation with unit quaternions.
    fn horn(src: &[Vector3<f64>], dst: &[Vector3<f64>]) -> Pose {
        let n = src.len() as f64;
        let cs = src.iter().sum::<Vector3<f64>>() / n;
        let cd = dst.iter().sum::<Vector3<f64>>() / n;
        let mut s = Matrix3::zeros();
        for (a, b) in src.iter().zip(dst) {
            s += (a - cs) * (b - cd).transpose();
        }
        let (sxx, sxy, sxz) = (s[(0, 0)], s[(0, 1)], s[(0, 2)]);
        let (syx, syy, syz) = (s[(1, 0)], s[(1, 1)], s[(1, 2)]);
        let (szx, szy, szz) = (s[(2, 0)], s[(2, 1)], s[(2, 2)]);
        let nmat = Matrix4::new(
            sxx + syy + szz, syz - szy, szx - sxz, sxy - syx,
            syz - szy, sxx - syy - szz, sxy + syx, szx + sxz,
            szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy,
            sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz,
        );
        let eig = SymmetricEigen::new(nmat);
        let i = eig.eigenvalues.imax();
        let q = eig.eigenvectors.column(i);
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]))
            .to_rotation_matrix()
            .into_inner();
        Pose::new(r, cd - r * cs)
    }

    #[test]
    fn perturbed_frame_matches_horn_oracle() {
        let gt = wiggly(12, 5);
        let mut entries = gt.entries().to_vec();
        entries[8].1.translation += Vector3::new(0.3, -0.2, 0.1);
        let est = Trajectory::new(entries).unwrap();
        let (e, g) = (est.positions(), gt.positions());
        let mut expected = 0.0;
        for k in 0..2 {
            let (es, gs) = (&e[6 * k..6 * k + 6], &g[6 * k..6 * k + 6]);
            let a = horn(es, gs);
            let sq: f64 = es.iter().zip(gs).map(|(p, q)| (a.transform(p) - q).norm_squared()).sum();
            expected += (sq / 6.0).sqrt();
        }
        expected /= 2.0;
        let got = segment_ate(&est, &gt, 6).unwrap();
        assert!(expected > 0.05);
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
    }
}
