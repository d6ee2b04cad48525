//! Rigid transforms in SE(3) and their twist coordinates in se(3).
//!
//! A [`Pose`] maps points expressed in one camera frame into another:
//! `x' = R x + t`. Relative motions `T_t` map frame `t-1` coordinates into
//! frame `t`, so the chained pose of frame `t` is `T_t ∘ … ∘ T_1`.
//!
//! Twists are stored as `[rho(3), phi(3)]`: translational part first,
//! rotational (axis-angle) part second.

use nalgebra::{Matrix3, Vector3, Vector6};
use std::fmt;

const SMALL_ANGLE: f64 = 1e-4;

/// Rigid transform `x ↦ R x + t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

/// Element of se(3): `[rho, phi]` with `rho` translational and `phi` rotational.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Twist(pub Vector6<f64>);

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = &self.translation;
        let w = Twist::log(self).rotation_part();
        write!(
            f,
            "Pose(t: [{:.5}, {:.5}, {:.5}], rotvec: [{:.5}, {:.5}, {:.5}])",
            t.x, t.y, t.z, w.x, w.y, w.z
        )
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about `axis_angle` (direction = axis, norm = angle in radians).
    pub fn from_rotation_vector(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: so3_exp(&axis_angle),
            translation,
        }
    }

    /// `self ∘ other`: apply `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation angle of `R` in radians, in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        so3_log(&self.rotation).norm()
    }

    /// Largest deviation of `RᵀR` from identity and of `det R` from one.
    pub fn orthonormality_error(&self) -> f64 {
        let rtr = self.rotation.transpose() * self.rotation - Matrix3::identity();
        let det = (self.rotation.determinant() - 1.0).abs();
        rtr.abs().max().max(det)
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }

    /// Re-orthonormalize the rotation through its polar decomposition.
    pub fn renormalized(&self) -> Pose {
        let svd = self.rotation.svd(true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let mut d = Matrix3::identity();
        if (u * vt).determinant() < 0.0 {
            d[(2, 2)] = -1.0;
        }
        Pose {
            rotation: u * d * vt,
            translation: self.translation,
        }
    }

    /// Angle between two rotations and distance between two translations.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let dr = self.rotation.transpose() * other.rotation;
        (so3_log(&dr).norm(), (self.translation - other.translation).norm())
    }
}

impl Twist {
    pub fn zero() -> Self {
        Twist(Vector6::zeros())
    }

    pub fn new(rho: Vector3<f64>, phi: Vector3<f64>) -> Self {
        Twist(Vector6::new(rho.x, rho.y, rho.z, phi.x, phi.y, phi.z))
    }

    pub fn translation_part(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn rotation_part(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Exponential map se(3) → SE(3).
    pub fn exp(&self) -> Pose {
        let rho = self.translation_part();
        let phi = self.rotation_part();
        Pose {
            rotation: so3_exp(&phi),
            translation: left_jacobian(&phi) * rho,
        }
    }

    /// Logarithm map SE(3) → se(3). Exact inverse of [`Twist::exp`] for
    /// rotation angles below π.
    pub fn log(pose: &Pose) -> Twist {
        let phi = so3_log(&pose.rotation);
        let rho = inverse_left_jacobian(&phi) * pose.translation;
        Twist::new(rho, phi)
    }
}

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rodrigues' formula.
pub fn so3_exp(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Matrix3::identity() + k * a + k * k * b
}

/// Rotation vector of `r`. Uses the antisymmetric part away from π and the
/// symmetric part near π, so both small and large angles keep full precision.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let v = 0.5
        * Vector3::new(
            r[(2, 1)] - r[(1, 2)],
            r[(0, 2)] - r[(2, 0)],
            r[(1, 0)] - r[(0, 1)],
        );
    let s = v.norm();
    let c = 0.5 * (r.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SMALL_ANGLE {
        // θ/sinθ ≈ 1 + θ²/6
        return v * (1.0 + theta * theta / 6.0);
    }
    if theta < std::f64::consts::PI - 1e-2 {
        return v * (theta / s);
    }
    // Near π: B = (R + Rᵀ)/2 - cI = (1 - c) a aᵀ.
    let b = 0.5 * (r + r.transpose()) - Matrix3::identity() * c;
    let one_minus_c = 1.0 - c;
    let i = (0..3)
        .max_by(|&i, &j| b[(i, i)].partial_cmp(&b[(j, j)]).unwrap())
        .unwrap();
    let ai = (b[(i, i)] / one_minus_c).max(0.0).sqrt();
    let mut axis = Vector3::zeros();
    for j in 0..3 {
        axis[j] = if j == i { ai } else { b[(i, j)] / (one_minus_c * ai) };
    }
    axis.normalize_mut();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

fn left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let (b, c) = if theta < SMALL_ANGLE {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    Matrix3::identity() + k * b + k * k * c
}

fn inverse_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    let d = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / theta2
    };
    Matrix3::identity() - k * 0.5 + k * k * d
}
