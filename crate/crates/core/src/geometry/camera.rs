use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use super::{GeometryError, Pose};

/// Pinhole intrinsics (no distortion).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Continuous image coordinates in pixels. Integer values sit on pixel centers.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct PixelCoord {
    pub x: f64,
    pub y: f64,
}

/// Result of projecting a point: the pixel plus its depth in the target frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: PixelCoord,
    pub depth: f64,
}

impl PixelCoord {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn offset(&self, d: Vector2<f64>) -> Self {
        Self::new(self.x + d.x, self.y + d.y)
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for PixelCoord {
    type Output = Vector2<f64>;
    fn sub(self, rhs: Self) -> Vector2<f64> {
        Vector2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self, GeometryError> {
        if !(fx > 0.0 && fy > 0.0 && cx.is_finite() && cy.is_finite()) {
            return Err(GeometryError::InvalidIntrinsics);
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹ [x y 1]ᵀ`: the viewing ray with unit z.
    #[inline]
    pub fn unproject(&self, p: PixelCoord) -> Vector3<f64> {
        Vector3::new((p.x - self.cx) / self.fx, (p.y - self.cy) / self.fy, 1.0)
    }

    /// Perspective projection of a camera-frame point. `None` when `z <= 0`.
    #[inline]
    pub fn project_point(&self, p: &Vector3<f64>) -> Option<PixelCoord> {
        if p.z <= 0.0 {
            return None;
        }
        Some(PixelCoord::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    pub fn back_project(&self, p: PixelCoord, depth: f64) -> Vector3<f64> {
        self.unproject(p) * depth
    }
}

/// Project `pixel` at `depth` through the chained pose `chain` (frame 0 → frame t).
pub fn project(
    k: &Intrinsics,
    chain: &Pose,
    pixel: PixelCoord,
    depth: f64,
) -> Result<Projection, GeometryError> {
    let p = chain.transform(&k.back_project(pixel, depth));
    match k.project_point(&p) {
        Some(px) => Ok(Projection {
            pixel: px,
            depth: p.z,
        }),
        None => Err(GeometryError::BehindCamera { depth: p.z }),
    }
}

/// Chain relative motions `T_1..T_n` into `[I, T_1, T_2∘T_1, …]`.
pub fn chain_poses(relative: &[Pose]) -> Vec<Pose> {
    let mut out = Vec::with_capacity(relative.len() + 1);
    let mut acc = Pose::identity();
    out.push(acc);
    for t in relative {
        acc = t.compose(&acc);
        out.push(acc);
    }
    out
}

/// Rigid flow `π_t − π_{t−1}` of `pixel` at `depth` for frame `t ≥ 1`, given
/// relative motions `relative[0..t]` (`relative[i]` is `T_{i+1}`).
pub fn rigid_flow(
    k: &Intrinsics,
    relative: &[Pose],
    t: usize,
    pixel: PixelCoord,
    depth: f64,
) -> Result<Vector2<f64>, GeometryError> {
    assert!(t >= 1 && t <= relative.len(), "frame index out of range");
    let chain = chain_poses(&relative[..t]);
    let prev = project(k, &chain[t - 1], pixel, depth)?;
    let cur = project(k, &chain[t], pixel, depth)?;
    Ok(cur.pixel - prev.pixel)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn k() -> Intrinsics {
        Intrinsics::new(100.0, 100.0, 64.0, 48.0).unwrap()
    }

    #[test]
    fn principal_ray_is_fixed_under_identity() {
        let p = project(&k(), &Pose::identity(), PixelCoord::new(64.0, 48.0), 2.0).unwrap();
        assert_eq!(p.pixel, PixelCoord::new(64.0, 48.0));
        assert_eq!(p.depth, 2.0);
    }

    #[test]
    fn lateral_translation_shifts_by_focal_over_depth() {
        let t = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let p = project(&k(), &t, PixelCoord::new(64.0, 48.0), 1.0).unwrap();
        assert!((p.pixel.x - 74.0).abs() < 1e-12);
        assert!((p.pixel.y - 48.0).abs() < 1e-12);
    }

    #[test]
    fn behind_camera_is_reported() {
        let t = Pose::from_translation(Vector3::new(0.0, 0.0, -2.0));
        match project(&k(), &t, PixelCoord::new(64.0, 48.0), 1.0) {
            Err(GeometryError::BehindCamera { depth }) => assert!((depth + 1.0).abs() < 1e-12),
            other => panic!("expected behind-camera, got {other:?}"),
        }
    }

    #[test]
    fn rigid_flow_examples() {
        let k = k();
        let f = rigid_flow(&k, &[Pose::identity()], 1, PixelCoord::new(10.0, 20.0), 3.0).unwrap();
        assert_eq!(f, Vector2::zeros());

        let t = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let f = rigid_flow(&k, &[t], 1, PixelCoord::new(64.0, 48.0), 1.0).unwrap();
        assert!((f - Vector2::new(10.0, 0.0)).norm() < 1e-12);

        let r = Pose::from_rotation_vector(Vector3::new(0.0, 0.0, PI), Vector3::zeros());
        let f = rigid_flow(&k, &[r], 1, PixelCoord::new(74.0, 48.0), 5.0).unwrap();
        assert!((f - Vector2::new(-20.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn rigid_flow_uses_consecutive_chain() {
        let k = k();
        let t1 = Pose::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let t2 = Pose::from_translation(Vector3::new(0.0, 0.2, 0.0));
        let f = rigid_flow(&k, &[t1, t2], 2, PixelCoord::new(64.0, 48.0), 2.0).unwrap();
        assert!((f - Vector2::new(0.0, 10.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_focal() {
        assert!(Intrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
        assert!(Intrinsics::new(1.0, -1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn projection_is_scale_consistent(
            x in 0.0..128.0f64, y in 0.0..96.0f64, depth in 0.5..20.0f64,
            tx in -0.3..0.3f64, ty in -0.3..0.3f64, tz in -0.3..0.3f64,
            wx in -0.1..0.1f64, wy in -0.1..0.1f64, wz in -0.1..0.1f64,
            scale in 0.1..10.0f64,
        ) {
            let k = k();
            let pose = Pose::from_rotation_vector(Vector3::new(wx, wy, wz), Vector3::new(tx, ty, tz));
            let scaled = Pose::new(pose.rotation, pose.translation * scale);
            let px = PixelCoord::new(x, y);
            let a = project(&k, &pose, px, depth).unwrap();
            let b = project(&k, &scaled, px, depth * scale).unwrap();
            prop_assert!((a.pixel - b.pixel).norm() < 1e-9);
        }
    }
}
