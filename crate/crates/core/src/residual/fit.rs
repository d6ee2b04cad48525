//! Offline calibration of the residual model from `(flow magnitude, EPE)`
//! samples: per-bin Fisk maximum likelihood, then log-linear regression of
//! the scale and linear regression of the shape against magnitude.

use serde::{Deserialize, Serialize};

use super::fisk::{softplus, FiskParams};
use super::{ResidualError, ResidualModel};

pub const MIN_BIN_SAMPLES: usize = 100;
pub const MIN_BINS: usize = 3;
const MAX_ASCENT_ROUNDS: usize = 50;
const GOLDEN_STEPS: usize = 48;

/// One magnitude bin and its Fisk fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinFit {
    pub mean_magnitude: f64,
    pub count: usize,
    pub params: FiskParams,
}

/// Learned constants `(a1, a2, b1, b2)` with the per-bin evidence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedConstants {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub bins: Vec<BinFit>,
}

impl FittedConstants {
    pub fn into_model(&self, lambda: f64) -> Result<ResidualModel, ResidualError> {
        ResidualModel::new(self.a1, self.a2, self.b1, self.b2, lambda)
    }
}

/// Bin `(magnitude, epe)` samples into `n_bins` equal-width bins over
/// `[0, mag_max]`, fit each populated bin, and regress the constants.
/// Samples outside the range or with non-positive EPE are ignored.
pub fn fit_residual_model(
    samples: &[(f64, f64)],
    n_bins: usize,
    mag_max: f64,
) -> Result<FittedConstants, ResidualError> {
    if n_bins == 0 || !(mag_max > 0.0) {
        return Err(ResidualError::InvalidModel("need at least one bin and a positive magnitude range"));
    }
    let width = mag_max / n_bins as f64;
    let mut bins: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_bins];
    for &(mag, epe) in samples {
        if !(mag >= 0.0 && mag <= mag_max && epe > 0.0 && epe.is_finite()) {
            continue;
        }
        let b = ((mag / width) as usize).min(n_bins - 1);
        bins[b].push((mag, epe));
    }

    let fits: Vec<BinFit> = bins
        .iter()
        .filter(|b| b.len() >= MIN_BIN_SAMPLES)
        .filter_map(|b| {
            let epe: Vec<f64> = b.iter().map(|s| s.1).collect();
            let params = fit_fisk_mle(&epe)?;
            Some(BinFit {
                mean_magnitude: b.iter().map(|s| s.0).sum::<f64>() / b.len() as f64,
                count: b.len(),
                params,
            })
        })
        .collect();
    if fits.len() < MIN_BINS {
        return Err(ResidualError::InsufficientData {
            usable_bins: fits.len(),
        });
    }

    let mags: Vec<f64> = fits.iter().map(|f| f.mean_magnitude).collect();
    let alphas: Vec<f64> = fits.iter().map(|f| f.params.alpha).collect();
    let betas: Vec<f64> = fits.iter().map(|f| f.params.beta).collect();
    let (a1, a2) = fit_log_linear(&mags, &alphas).ok_or(ResidualError::InsufficientData {
        usable_bins: fits.len(),
    })?;
    let (b2, b1) = fit_linear(&mags, &betas).ok_or(ResidualError::InsufficientData {
        usable_bins: fits.len(),
    })?;
    Ok(FittedConstants {
        a1,
        a2,
        b1,
        b2,
        bins: fits,
    })
}

/// Ordinary least squares `y ≈ intercept + slope·x`; returns `(intercept, slope)`.
pub fn fit_linear(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    Some((my - slope * mx, slope))
}

/// Fit `y ≈ c1·exp(c2·x)` by least squares on `ln y`; returns `(c1, c2)`.
pub fn fit_log_linear(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    if y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let logs: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (intercept, slope) = fit_linear(x, &logs)?;
    Some((intercept.exp(), slope))
}

/// Fisk log-likelihood given precomputed `ln x`.
fn log_likelihood(log_x: &[f64], log_alpha: f64, beta: f64) -> f64 {
    let n = log_x.len() as f64;
    let mut acc = n * (beta.ln() - log_alpha);
    for &lx in log_x {
        let lr = lx - log_alpha;
        acc += (beta - 1.0) * lr - 2.0 * softplus(beta * lr);
    }
    acc
}

fn golden_max(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    for _ in 0..GOLDEN_STEPS {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood Fisk parameters by coordinate ascent from
/// `(α = median, β = 1)`, each coordinate maximized by golden-section search
/// in log space. `None` when the sample is degenerate (fewer than two
/// distinct values, or the shape runs off to infinity).
pub fn fit_fisk_mle(samples: &[f64]) -> Option<FiskParams> {
    let mut log_x: Vec<f64> = samples.iter().filter(|v| **v > 0.0).map(|v| v.ln()).collect();
    if log_x.len() < 2 {
        return None;
    }
    log_x.sort_by(|a, b| a.total_cmp(b));
    if log_x[log_x.len() - 1] - log_x[0] < 1e-12 {
        return None;
    }
    let mut la = log_x[log_x.len() / 2];
    let mut lb = 0.0f64;
    let mut prev = log_likelihood(&log_x, la, lb.exp());
    for _ in 0..MAX_ASCENT_ROUNDS {
        let b = lb.exp();
        let spread = 4.0 / b;
        la = golden_max(la - spread, la + spread, |v| log_likelihood(&log_x, v, b));
        lb = golden_max(lb - 2.0, lb + 2.0, |v| log_likelihood(&log_x, la, v.exp()));
        let cur = log_likelihood(&log_x, la, lb.exp());
        if (cur - prev).abs() <= 1e-12 * cur.abs().max(1.0) {
            break;
        }
        prev = cur;
    }
    let params = FiskParams::new(la.exp(), lb.exp());
    if !(params.alpha.is_finite() && params.beta.is_finite() && params.beta < 1e6) {
        return None;
    }
    Some(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::residual::fisk_quantile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_log_linear_regression() {
        let (a1, a2) = (0.013, 0.071);
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 7.5).collect();
        let y: Vec<f64> = x.iter().map(|m| a1 * (a2 * m).exp()).collect();
        let (c1, c2) = fit_log_linear(&x, &y).unwrap();
        assert!((c1 - a1).abs() < 1e-9 && (c2 - a2).abs() < 1e-9);
    }

    #[test]
    fn exact_linear_regression() {
        let x = [0.0, 10.0, 20.0, 55.0];
        let y: Vec<f64> = x.iter().map(|m| 1.2 - 0.004 * m).collect();
        let (b2, b1) = fit_linear(&x, &y).unwrap();
        assert!((b2 - 1.2).abs() < 1e-12 && (b1 + 0.004).abs() < 1e-12);
    }

    #[test]
    fn single_bin_mle_recovers_parameters() {
        let truth = FiskParams::new(0.4, 1.7);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..20000).map(|_| fisk_quantile(rng.random::<f64>(), &truth)).collect();
        let fit = fit_fisk_mle(&xs).unwrap();
        assert!((fit.alpha / truth.alpha - 1.0).abs() < 0.03, "{fit:?}");
        assert!((fit.beta / truth.beta - 1.0).abs() < 0.03, "{fit:?}");
    }

    #[test]
    fn identical_values_are_insufficient() {
        let samples: Vec<(f64, f64)> = (0..5000).map(|i| ((i % 100) as f64, 0.5)).collect();
        assert!(fit_fisk_mle(&vec![0.5; 500]).is_none());
        assert!(matches!(
            fit_residual_model(&samples, 10, 100.0),
            Err(ResidualError::InsufficientData { usable_bins: 0 })
        ));
    }

    #[test]
    fn underpopulated_bins_are_dropped() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = FiskParams::new(1.0, 2.0);
        // Only two bins receive enough samples.
        let samples: Vec<(f64, f64)> = (0..1000)
            .map(|i| (if i % 2 == 0 { 5.0 } else { 15.0 }, fisk_quantile(rng.random(), &p)))
            .chain((0..50).map(|_| (55.0, 1.0)))
            .collect();
        assert!(matches!(
            fit_residual_model(&samples, 10, 100.0),
            Err(ResidualError::InsufficientData { usable_bins: 2 })
        ));
    }
}
