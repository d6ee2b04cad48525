//! Minimal absolute pose from three 3D–2D correspondences (AP3P).
//!
//! The algebraic formulation parameterizes the rotation through two
//! elementary rotations whose angles are tied by a single quartic in the
//! cosine of the first angle; each real root in `[-1, 1]` yields one pose
//! without any cubic resolvent or depth back-substitution.

use nalgebra::{Complex, Matrix3, Matrix4, Vector3};

use super::{GeometryError, Intrinsics, PixelCoord, Pose};

/// Minimum triangle area of the three world points.
pub const COLLINEAR_AREA: f64 = 1e-12;
/// Candidates reprojecting worse than this (pixels) are discarded.
pub const REPROJECTION_TOLERANCE: f64 = 1e-6;

/// Solve P3P for the pose mapping world points into the camera frame.
/// Returns up to four candidates, each of which reprojects the three points
/// onto the three pixels.
pub fn solve_p3p(
    points: &[Vector3<f64>; 3],
    pixels: &[PixelCoord; 3],
    k: &Intrinsics,
) -> Result<Vec<Pose>, GeometryError> {
    let bearings = [
        k.unproject(pixels[0]).normalize(),
        k.unproject(pixels[1]).normalize(),
        k.unproject(pixels[2]).normalize(),
    ];
    let raw = solve_p3p_bearings(points, &bearings)?;
    let accepted: Vec<Pose> = raw
        .into_iter()
        .map(|pose| refine(pose, points, &bearings))
        .filter(|pose| max_reprojection_error(pose, points, pixels, k) < REPROJECTION_TOLERANCE)
        .collect();
    if accepted.is_empty() {
        return Err(GeometryError::NoRealSolution);
    }
    Ok(accepted)
}

/// Largest pixel reprojection error of `pose` over the correspondences;
/// infinite when a point falls behind the camera.
pub fn max_reprojection_error(
    pose: &Pose,
    points: &[Vector3<f64>],
    pixels: &[PixelCoord],
    k: &Intrinsics,
) -> f64 {
    points
        .iter()
        .zip(pixels)
        .map(|(p, px)| match k.project_point(&pose.transform(p)) {
            Some(q) => (q - *px).norm(),
            None => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// AP3P on unit bearing vectors. Candidates are not filtered beyond real
/// roots and positive depth of the third point.
pub fn solve_p3p_bearings(
    world: &[Vector3<f64>; 3],
    bearings: &[Vector3<f64>; 3],
) -> Result<Vec<Pose>, GeometryError> {
    let [w1, w2, w3] = world;
    let [b1, b2, b3] = bearings;

    let area = 0.5 * (w2 - w1).cross(&(w3 - w1)).norm();
    if !(area > COLLINEAR_AREA) {
        return Err(GeometryError::Collinear);
    }

    let u0 = w1 - w2;
    let nu0 = u0.norm();
    let k1 = u0 / nu0;

    let k3_raw = b1.cross(b2);
    let nk3 = k3_raw.norm();
    if nk3 < 1e-15 {
        return Err(GeometryError::Collinear);
    }
    let k3 = k3_raw / nk3;
    let tz = b1.cross(&k3);
    let v1 = b1.cross(b3);
    let v2 = b2.cross(b3);

    let u1 = w1 - w3;
    let u1k1 = u1.dot(&k1);
    let k3b3 = k3.dot(b3);
    if k3b3.abs() < 1e-15 {
        return Err(GeometryError::Collinear);
    }

    let nl_raw = u1.cross(&k1);
    let delta = nl_raw.norm();
    let nl = nl_raw / delta;

    let f11 = delta * k3b3;
    let f13 = delta * k3.dot(&v1);
    let f15 = -u1k1 * k3b3;

    let u2k1 = u1k1 - nu0;
    let f21r = tz.dot(&v2);
    let f22r = nk3 * k3b3;
    let f23r = k3.dot(&v2);
    let f24 = u2k1 * f22r;
    let f25 = -u2k1 * f21r;
    let f21 = f21r * delta;
    let f22 = f22r * delta;
    let f23 = f23r * delta;

    let g1 = f13 * f22;
    let g2 = f13 * f25 - f15 * f23;
    let g3 = f11 * f23 - f13 * f21;
    let g4 = -f13 * f24;
    let g5 = f11 * f22;
    let g6 = f11 * f25 - f15 * f21;
    let g7 = -f15 * f24;

    let coeffs = [
        g5 * g5 + g1 * g1 + g3 * g3,
        2.0 * (g5 * g6 + g1 * g2 + g3 * g4),
        g6 * g6 + 2.0 * g5 * g7 + g2 * g2 + g4 * g4 - g1 * g1 - g3 * g3,
        2.0 * (g6 * g7 - g1 * g2 - g3 * g4),
        g7 * g7 - g2 * g2 - g4 * g4,
    ];
    let roots = quartic_real_roots(&coeffs);
    if roots.is_empty() {
        return Err(GeometryError::NoRealSolution);
    }

    let ck1nl = Matrix3::from_columns(&[k1, nl, k1.cross(&nl)]);
    let cb1k3tz_t = Matrix3::from_rows(&[b1.transpose(), k3.transpose(), tz.transpose()]);
    let b3p = b3 * (delta / k3b3);

    let mut out = Vec::with_capacity(4);
    for c1 in roots {
        if c1.abs() > 1.0 + 1e-9 {
            continue;
        }
        let c1 = c1.clamp(-1.0, 1.0);
        let mut s1 = (1.0 - c1 * c1).sqrt();
        if k3b3 < 0.0 {
            s1 = -s1;
        }
        let denom = (g5 * c1 + g6) * c1 + g7;
        if denom.abs() < 1e-300 {
            continue;
        }
        let n3 = s1 / denom;
        let c3 = (g1 * c1 + g2) * n3;
        let s3 = (g3 * c1 + g4) * n3;

        let c13 = Matrix3::new(
            c3,
            0.0,
            -s3,
            s1 * s3,
            c1,
            s1 * c3,
            c1 * s3,
            -s1,
            c1 * c3,
        );
        let r = ck1nl * c13 * cb1k3tz_t;
        let rotation = r.transpose();
        let translation = b3p * s1 - rotation * w3;
        let pose = Pose::new(rotation, translation);
        if !pose.is_finite() {
            continue;
        }
        if world.iter().all(|w| pose.transform(w).z > 0.0) {
            out.push(pose);
        }
    }
    if out.is_empty() {
        return Err(GeometryError::NoRealSolution);
    }
    Ok(out)
}

/// A few Gauss-Newton steps on the bearing residuals. P3P is exactly
/// determined, so this only removes floating-point error from the roots.
fn refine(pose: Pose, world: &[Vector3<f64>; 3], bearings: &[Vector3<f64>; 3]) -> Pose {
    use nalgebra::{Matrix6, Vector6};
    use super::{skew, Twist};

    let residual = |p: &Pose| -> Vector6<f64> {
        let mut r = Vector6::zeros();
        for i in 0..3 {
            let q = p.transform(&world[i]);
            let b = bearings[i];
            r[2 * i] = q.x / q.z - b.x / b.z;
            r[2 * i + 1] = q.y / q.z - b.y / b.z;
        }
        r
    };

    let mut current = pose;
    let mut err = residual(&current);
    for _ in 0..4 {
        if err.norm() < 1e-15 {
            break;
        }
        let mut jac = Matrix6::zeros();
        for (i, w) in world.iter().enumerate() {
            let q = current.transform(w);
            let iz = 1.0 / q.z;
            let dproj = nalgebra::Matrix2x3::new(iz, 0.0, -q.x * iz * iz, 0.0, iz, -q.y * iz * iz);
            // Left perturbation: q' = exp(δ) q, dq/dρ = I, dq/dφ = -[q]×.
            let mut dq = nalgebra::Matrix3x6::zeros();
            dq.fixed_view_mut::<3, 3>(0, 0).copy_from(&Matrix3::identity());
            dq.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&q)));
            let rows = dproj * dq;
            jac.fixed_view_mut::<2, 6>(2 * i, 0).copy_from(&rows);
        }
        let Some(step) = jac.lu().solve(&(-err)) else { break };
        let next = Twist(step).exp().compose(&current);
        let next_err = residual(&next);
        if !(next_err.norm() < err.norm()) {
            break;
        }
        current = next;
        err = next_err;
    }
    current.renormalized()
}

/// Real roots of `c[0] x⁴ + c[1] x³ + c[2] x² + c[3] x + c[4]`, from the
/// companion-matrix eigenvalues followed by Newton polishing.
pub fn quartic_real_roots(c: &[f64; 5]) -> Vec<f64> {
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 || c[0].abs() < 1e-14 * scale {
        return cubic_fallback(c);
    }
    let a = [c[1] / c[0], c[2] / c[0], c[3] / c[0], c[4] / c[0]];
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3], //
        1.0, 0.0, 0.0, 0.0, //
        0.0, 1.0, 0.0, 0.0, //
        0.0, 0.0, 1.0, 0.0,
    );
    let eig: Vec<Complex<f64>> = companion.complex_eigenvalues().iter().copied().collect();
    let mut roots: Vec<f64> = eig
        .into_iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| polish(c, z.re))
        .collect();
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    roots
}

fn cubic_fallback(c: &[f64; 5]) -> Vec<f64> {
    // Degenerate leading coefficient: solve the remaining cubic via its companion matrix.
    if c[1] == 0.0 {
        return Vec::new();
    }
    let a = [c[2] / c[1], c[3] / c[1], c[4] / c[1]];
    let companion = Matrix3::new(-a[0], -a[1], -a[2], 1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= 1e-6 * (1.0 + z.re.abs()))
        .map(|z| polish(c, z.re))
        .collect()
}

fn polish(c: &[f64; 5], mut x: f64) -> f64 {
    for _ in 0..8 {
        let f = (((c[0] * x + c[1]) * x + c[2]) * x + c[3]) * x + c[4];
        let df = ((4.0 * c[0] * x + 3.0 * c[1]) * x + 2.0 * c[2]) * x + c[3];
        if df == 0.0 {
            break;
        }
        let step = f / df;
        let next = x - step;
        if !next.is_finite() {
            break;
        }
        let fn_ = (((c[0] * next + c[1]) * next + c[2]) * next + c[3]) * next + c[4];
        if fn_.abs() > f.abs() {
            break;
        }
        x = next;
        if step.abs() < 1e-16 * (1.0 + x.abs()) {
            break;
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{project, Twist};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap()
    }

    fn random_instance(rng: &mut ChaCha8Rng) -> (Pose, [Vector3<f64>; 3], [PixelCoord; 3]) {
        let k = k();
        loop {
            let pose = Twist::new(
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
                Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            )
            .exp();
            let inv = pose.inverse();
            let mut world = [Vector3::zeros(); 3];
            let mut pixels = [PixelCoord::default(); 3];
            for i in 0..3 {
                let px = PixelCoord::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
                let depth = rng.random_range(1.0..10.0);
                world[i] = inv.transform(&k.back_project(px, depth));
                pixels[i] = px;
            }
            let area = 0.5 * (world[1] - world[0]).cross(&(world[2] - world[0])).norm();
            if area > 1e-3 {
                return (pose, world, pixels);
            }
        }
    }

    #[test]
    fn quartic_with_known_roots() {
        // (x-1)(x+2)(x-0.5)(x-3)
        let roots = [1.0, -2.0, 0.5, 3.0];
        let mut c = [1.0, 0.0, 0.0, 0.0, 0.0];
        let mut poly = vec![1.0];
        for r in roots {
            let mut next = vec![0.0; poly.len() + 1];
            for (i, p) in poly.iter().enumerate() {
                next[i] += p;
                next[i + 1] -= p * r;
            }
            poly = next;
        }
        c.copy_from_slice(&poly);
        let mut got = quartic_real_roots(&c);
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(got.len(), 4);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn recovers_forward_synthesized_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (pose, world, pixels) = random_instance(&mut rng);
        let sols = solve_p3p(&world, &pixels, &k()).unwrap();
        assert!(!sols.is_empty() && sols.len() <= 4);
        let best = sols
            .iter()
            .map(|s| s.distance(&pose))
            .fold((f64::INFINITY, f64::INFINITY), |a, b| if b.0 + b.1 < a.0 + a.1 { b } else { a });
        assert!(best.0 < 1e-6 && best.1 < 1e-6, "{best:?}");
        for s in &sols {
            assert!(max_reprojection_error(s, &world, &pixels, &k()) < REPROJECTION_TOLERANCE);
            assert!(s.orthonormality_error() < 1e-9);
        }
        // Sanity: forward projection of the ground truth matches the pixels.
        for px in pixels {
            let q = project(&k(), &Pose::identity(), px, 1.0).unwrap();
            assert!(q.pixel.is_finite());
        }
    }

    #[test]
    fn collinear_points_are_rejected() {
        let world = [
            Vector3::new(0.0, 0.0, 5.0),
            Vector3::new(1.0, 0.0, 5.0),
            Vector3::new(2.0, 0.0, 5.0),
        ];
        let k = k();
        let pixels = world.map(|w| k.project_point(&w).unwrap());
        assert_eq!(solve_p3p(&world, &pixels, &k), Err(GeometryError::Collinear));
    }

    #[test]
    fn many_random_instances_contain_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = k();
        for _ in 0..200 {
            let (pose, world, pixels) = random_instance(&mut rng);
            let sols = solve_p3p(&world, &pixels, &k).unwrap();
            assert!(sols.iter().any(|s| {
                let (dr, dt) = s.distance(&pose);
                dr < 1e-6 && dt < 1e-6
            }));
        }
    }
}
