use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::fisk::{log_fisk_pdf, FiskParams};
use super::ResidualError;

/// Floor for every log-density fed to inference, keeping emission tables finite.
pub const LOG_DENSITY_FLOOR: f64 = -700.0;
pub const ALPHA_MIN: f64 = 1e-6;
pub const BETA_MIN: f64 = 0.1;

/// Magnitude-conditioned Fisk residual model plus the outlier level `lambda`.
///
/// `α(m) = a1·exp(a2·m)`, `β(m) = b1·m + b2`, where `m` is the observed flow
/// magnitude in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualModel {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub lambda: f64,
}

impl Default for ResidualModel {
    fn default() -> Self {
        Self::KITTI
    }
}

impl ResidualModel {
    /// Constants calibrated for PWC-Net flow on KITTI.
    pub const KITTI: ResidualModel = ResidualModel {
        a1: 0.01,
        a2: 0.09,
        b1: -0.0022,
        b2: 1.0,
        lambda: 0.15,
    };

    pub fn new(a1: f64, a2: f64, b1: f64, b2: f64, lambda: f64) -> Result<Self, ResidualError> {
        let m = Self {
            a1,
            a2,
            b1,
            b2,
            lambda,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ResidualError> {
        let finite = [self.a1, self.a2, self.b1, self.b2, self.lambda]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.a1 <= 0.0 {
            return Err(ResidualError::InvalidModel("a1 must be positive and all constants finite"));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(ResidualError::InvalidModel("lambda must lie in (0, 1)"));
        }
        Ok(())
    }

    /// Whether the unfloored shape stays positive on `[0, mag_max]`.
    pub fn shape_positive_on(&self, mag_max: f64) -> bool {
        self.b2 > 0.0 && self.b1 * mag_max + self.b2 > 0.0
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.lambda = lambda;
        self
    }

    pub fn adaptive_params(&self, flow_mag: f64) -> FiskParams {
        let alpha = (self.a1 * (self.a2 * flow_mag).exp()).max(ALPHA_MIN);
        let beta = (self.b1 * flow_mag + self.b2).max(BETA_MIN);
        FiskParams { alpha, beta }
    }
}

/// Shape of the residual density used for inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidualKind {
    #[default]
    Fisk,
    /// Isotropic 2D Gaussian on the residual vector, with scale matched to
    /// the Fisk median at the same magnitude. Used for ablations.
    Gaussian,
}

/// Rayleigh median is `σ·sqrt(2 ln 2)`.
const RAYLEIGH_MEDIAN: f64 = 1.177_410_022_515_474_6;

/// Residual density plus the matching outlier density.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ObservationModel {
    pub residual: ResidualModel,
    pub kind: ResidualKind,
}

impl ObservationModel {
    pub fn fisk(residual: ResidualModel) -> Self {
        Self {
            residual,
            kind: ResidualKind::Fisk,
        }
    }

    pub fn gaussian(residual: ResidualModel) -> Self {
        Self {
            residual,
            kind: ResidualKind::Gaussian,
        }
    }

    #[inline]
    fn log_density(&self, x: f64, p: &FiskParams) -> f64 {
        let v = match self.kind {
            ResidualKind::Fisk => log_fisk_pdf(x, p),
            ResidualKind::Gaussian => {
                let sigma = p.alpha / RAYLEIGH_MEDIAN;
                -(2.0 * std::f64::consts::PI * sigma * sigma).ln() - x * x / (2.0 * sigma * sigma)
            }
        };
        v.max(LOG_DENSITY_FLOOR)
    }

    /// `(ln ρ(rigid ‖ observed), ln μ(observed))`, floored.
    #[inline]
    pub fn log_densities(&self, rigid: &Vector2<f64>, observed: &Vector2<f64>) -> (f64, f64) {
        let mag = observed.norm();
        let p = self.residual.adaptive_params(mag);
        let epe = (rigid - observed).norm();
        (
            self.log_density(epe, &p),
            self.log_density(self.residual.lambda * mag, &p),
        )
    }

    /// `ln μ(observed)` alone.
    #[inline]
    pub fn log_outlier(&self, observed: &Vector2<f64>) -> f64 {
        let mag = observed.norm();
        let p = self.residual.adaptive_params(mag);
        self.log_density(self.residual.lambda * mag, &p)
    }
}

/// Fisk density of the end-point error between the rigid and observed flow,
/// with parameters conditioned on the observed magnitude.
pub fn rho(rigid: &Vector2<f64>, observed: &Vector2<f64>, model: &ResidualModel) -> f64 {
    let p = model.adaptive_params(observed.norm());
    super::fisk::fisk_pdf((rigid - observed).norm(), &p)
}

/// Outlier density: the Fisk density at `λ·‖observed‖` under the same
/// magnitude-conditioned parameters. Independent of any rigid hypothesis.
pub fn outlier_density(observed: &Vector2<f64>, model: &ResidualModel) -> f64 {
    let mag = observed.norm();
    let p = model.adaptive_params(mag);
    super::fisk::fisk_pdf(model.lambda * mag, &p)
}
