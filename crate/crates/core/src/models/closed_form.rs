use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use super::ModelError;

/// Stationary queue length of an M/M/1 queue: `P(n) = (1 - load) load^n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GeometricLaw {
    pub load: f64,
}

impl GeometricLaw {
    pub fn pmf(&self, n: u64) -> f64 {
        (1.0 - self.load) * self.load.powf(n as f64)
    }

    pub fn mean(&self) -> f64 {
        self.load / (1.0 - self.load)
    }

    pub fn variance(&self) -> f64 {
        self.load / ((1.0 - self.load) * (1.0 - self.load))
    }

    pub fn p_empty(&self) -> f64 {
        1.0 - self.load
    }
}

pub fn mm1_stationary(load: f64) -> Result<GeometricLaw, ModelError> {
    if !(0.0..1.0).contains(&load) {
        return Err(ModelError::Domain(format!(
            "M/M/1 load must lie in [0, 1), got {load}"
        )));
    }
    Ok(GeometricLaw { load })
}

/// Stationary occupancy of an M/M/infinity queue with offered load `a`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonLaw {
    pub mean: f64,
}

impl PoissonLaw {
    pub fn pmf(&self, n: u64) -> f64 {
        self.ln_pmf(n).exp()
    }

    pub fn ln_pmf(&self, n: u64) -> f64 {
        if self.mean == 0.0 {
            return if n == 0 { 0.0 } else { f64::NEG_INFINITY };
        }
        let k = n as f64;
        k * self.mean.ln() - self.mean - ln_gamma(k + 1.0)
    }

    pub fn variance(&self) -> f64 {
        self.mean
    }
}

pub fn mminfty_stationary(a: f64) -> Result<PoissonLaw, ModelError> {
    if !(a.is_finite() && a >= 0.0) {
        return Err(ModelError::Domain(format!(
            "M/M/infinity load must be finite and nonnegative, got {a}"
        )));
    }
    Ok(PoissonLaw { mean: a })
}
