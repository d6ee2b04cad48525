use nalgebra::Vector3;

use super::{GeometryError, Intrinsics, PixelCoord, Pose};

/// Rays closer to parallel than this (radians) are rejected.
pub const PARALLEL_TOLERANCE: f64 = 1e-8;

/// Two-view triangulation result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Triangulation {
    /// Depth (z) of the point in frame 0.
    pub depth: f64,
    /// Depth (z) of the point in frame 1.
    pub depth_second: f64,
    /// Angle between the two viewing rays; small values mean poor conditioning.
    pub parallax: f64,
    pub point: Vector3<f64>,
}

/// Midpoint triangulation of a correspondence between frame 0 and frame 1,
/// where `t1` maps frame 0 coordinates into frame 1.
pub fn triangulate(
    k: &Intrinsics,
    t1: &Pose,
    pixel0: PixelCoord,
    pixel1: PixelCoord,
) -> Result<Triangulation, GeometryError> {
    triangulate_rays(t1, &k.unproject(pixel0), &k.unproject(pixel1))
}

/// Same as [`triangulate`] with rays already in normalized camera coordinates.
pub fn triangulate_rays(
    t1: &Pose,
    ray0: &Vector3<f64>,
    ray1: &Vector3<f64>,
) -> Result<Triangulation, GeometryError> {
    if t1.translation.norm() < 1e-12 {
        return Err(GeometryError::Degenerate);
    }
    let rt = t1.rotation.transpose();
    let c1 = -(rt * t1.translation);
    let d0 = *ray0;
    let d1 = rt * ray1;

    let a = d0.dot(&d0);
    let b = d0.dot(&d1);
    let c = d1.dot(&d1);
    let cross = d0.cross(&d1).norm();
    let parallax = cross.atan2(b);
    if parallax.abs() < PARALLEL_TOLERANCE {
        return Err(GeometryError::Degenerate);
    }
    let det = a * c - b * b;
    let r0 = d0.dot(&c1);
    let r1 = d1.dot(&c1);
    let lambda0 = (c * r0 - b * r1) / det;
    let lambda1 = (b * r0 - a * r1) / det;

    let point = 0.5 * (d0 * lambda0 + c1 + d1 * lambda1);
    let second = t1.transform(&point);
    Ok(Triangulation {
        depth: point.z,
        depth_second: second.z,
        parallax,
        point,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::project;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap()
    }

    #[test]
    fn forward_synthesized_point() {
        let k = k();
        let t1 = Pose::from_rotation_vector(Vector3::new(0.01, -0.02, 0.005), Vector3::new(0.3, 0.05, -0.1));
        let p0 = PixelCoord::new(40.0, 60.0);
        let p1 = project(&k, &t1, p0, 3.0).unwrap().pixel;
        let tri = triangulate(&k, &t1, p0, p1).unwrap();
        assert!((tri.depth - 3.0).abs() < 1e-6);
        assert!(tri.parallax > 0.0);
    }

    #[test]
    fn zero_baseline_is_degenerate() {
        let p = PixelCoord::new(10.0, 10.0);
        assert_eq!(
            triangulate(&k(), &Pose::identity(), p, p),
            Err(GeometryError::Degenerate)
        );
    }

    #[test]
    fn parallel_rays_are_degenerate() {
        // Pure translation with identical pixels: rays are parallel.
        let t1 = Pose::from_translation(Vector3::new(1.0, 0.0, 0.0));
        let p = PixelCoord::new(20.0, 30.0);
        assert_eq!(triangulate(&k(), &t1, p, p), Err(GeometryError::Degenerate));
    }

    #[test]
    fn random_batch_round_trip() {
        let k = k();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t1 = Pose::from_rotation_vector(
            Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)),
            Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)),
        );
        let mut max_err: f64 = 0.0;
        for _ in 0..100 {
            let p0 = PixelCoord::new(rng.random_range(0.0..128.0), rng.random_range(0.0..96.0));
            let depth = rng.random_range(1.0..20.0);
            let Ok(proj) = project(&k, &t1, p0, depth) else { continue };
            let tri = triangulate(&k, &t1, p0, proj.pixel).unwrap();
            max_err = max_err.max((tri.depth - depth).abs());
            assert!((tri.depth_second - proj.depth).abs() < 1e-6);
        }
        assert!(max_err < 1e-6, "max error {max_err}");
    }
}
