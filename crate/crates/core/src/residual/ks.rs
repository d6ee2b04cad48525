//! Kolmogorov–Smirnov goodness of fit against analytic references.

use statrs::function::erf::erf;

use super::fisk::{fisk_cdf, FiskParams};

/// `sup |F_empirical − F|` for ascending-sorted samples.
pub fn ks_statistic_with(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    assert!(!sorted.is_empty(), "K-S statistic needs at least one sample");
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            let above = (i + 1) as f64 / n - f;
            let below = f - i as f64 / n;
            above.max(below)
        })
        .fold(0.0, f64::max)
}

/// K-S distance between sorted samples and a Fisk reference.
pub fn ks_statistic(sorted: &[f64], p: &FiskParams) -> f64 {
    ks_statistic_with(sorted, |x| fisk_cdf(x, p))
}

pub fn gaussian_cdf(x: f64, mean: f64, std: f64) -> f64 {
    0.5 * (1.0 + erf((x - mean) / (std * std::f64::consts::SQRT_2)))
}

/// Sample mean and (population) standard deviation.
pub fn fit_gaussian(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Asymptotic two-sided K-S critical value at the 5% level.
pub fn ks_critical_95(n: usize) -> f64 {
    1.36 / (n as f64).sqrt()
}
