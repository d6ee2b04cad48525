//! The Fisk (log-logistic) distribution on the non-negative reals.

use serde::{Deserialize, Serialize};

/// Below this value with `β < 1`, where the density diverges at zero, the
/// density is replaced by its average `F(X_MIN)/X_MIN` over `[0, X_MIN]`.
pub const X_MIN: f64 = 1e-4;

/// Scale `alpha` (the median) and shape `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiskParams {
    pub alpha: f64,
    pub beta: f64,
}

impl FiskParams {
    pub fn new(alpha: f64, beta: f64) -> Self {
        debug_assert!(alpha > 0.0 && beta > 0.0);
        Self { alpha, beta }
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
pub(crate) fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Density `(β/α)(x/α)^(β−1) / (1 + (x/α)^β)²`, flattened below
/// [`X_MIN`] when `β < 1` so that it stays finite and still integrates to 1.
pub fn fisk_pdf(x: f64, p: &FiskParams) -> f64 {
    if x <= 0.0 && p.beta > 1.0 {
        return 0.0;
    }
    log_fisk_pdf(x, p).exp()
}

/// Natural log of [`fisk_pdf`]; `-∞` only at `x = 0` with `β > 1`.
pub fn log_fisk_pdf(x: f64, p: &FiskParams) -> f64 {
    let x = x.max(0.0);
    if p.beta < 1.0 && x < X_MIN {
        // ln F(X_MIN) − ln X_MIN
        return -softplus(-p.beta * (X_MIN.ln() - p.alpha.ln())) - X_MIN.ln();
    }
    if x == 0.0 {
        return if p.beta == 1.0 {
            -p.alpha.ln()
        } else {
            f64::NEG_INFINITY
        };
    }
    let lr = x.ln() - p.alpha.ln();
    p.beta.ln() - p.alpha.ln() + (p.beta - 1.0) * lr - 2.0 * softplus(p.beta * lr)
}

/// `1 / (1 + (x/α)^(−β))`.
pub fn fisk_cdf(x: f64, p: &FiskParams) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    let z = p.beta * (x.ln() - p.alpha.ln());
    // logistic(z)
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Quantile function; maps `u ∈ (0,1)` to `α (u/(1−u))^(1/β)`.
pub fn fisk_quantile(u: f64, p: &FiskParams) -> f64 {
    p.alpha * (u / (1.0 - u)).powf(1.0 / p.beta)
}
