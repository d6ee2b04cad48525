//! Adaptive log-logistic residual model: density, magnitude-conditioned
//! parameters, outlier density, calibration and goodness-of-fit.

mod fisk;
mod fit;
mod ks;
mod model;

use thiserror::Error;

pub use fisk::{fisk_cdf, fisk_pdf, fisk_quantile, log_fisk_pdf, FiskParams, X_MIN};
pub use fit::{
    fit_fisk_mle, fit_linear, fit_log_linear, fit_residual_model, BinFit, FittedConstants, MIN_BINS,
    MIN_BIN_SAMPLES,
};
pub use ks::{fit_gaussian, gaussian_cdf, ks_critical_95, ks_statistic, ks_statistic_with};
pub use model::{
    outlier_density, rho, ObservationModel, ResidualKind, ResidualModel, ALPHA_MIN, BETA_MIN,
    LOG_DENSITY_FLOOR,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ResidualError {
    #[error("invalid residual model: {0}")]
    InvalidModel(&'static str),
    #[error("insufficient data: only {usable_bins} usable magnitude bins")]
    InsufficientData { usable_bins: usize },
}
