//! Parameterized processes of the two-class processor-sharing cell and the
//! closed-form quantities attached to them.
//!
//! Every chain is a [`RateModel`](crate::ctmc::RateModel). Lattice models use
//! `x1` for class-1 (static) users and `x2` for class-2 (mobile) users; the
//! shifted process [`ZModel`] stores its value in `x2` with `x1 = 0`.

mod closed_form;
mod joint;
mod rates;

use serde::Serialize;
use thiserror::Error;

pub use closed_form::{mm1_stationary, mminfty_stationary, GeometricLaw, PoissonLaw};
pub use joint::{joint_rates, JointModel, JointState};
pub use rates::{
    alpha, beta_rate, free_rates, rate_algebra_defect, ytilde_rates, yprime_rates, z_rates,
    FreeModel, Mm1, MmInf, YPrimeModel, YTildeModel, ZModel,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("rate {rate} from {state} to {target} is not a finite nonnegative number")]
    InvalidRate {
        state: String,
        target: String,
        rate: f64,
    },
    #[error("model jumps from {state} to itself")]
    SelfTransition { state: String },
    #[error("outside the domain: {0}")]
    Domain(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
}

fn check_rate(name: &str, v: f64) -> Result<(), ModelError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParams(format!(
            "{name} must be a finite nonnegative rate, got {v}"
        )))
    }
}

fn check_mu(mu: f64) -> Result<(), ModelError> {
    if mu.is_finite() && mu > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParams(format!(
            "mu must be finite and positive, got {mu}"
        )))
    }
}

/// Parameters of the free model: arrival rates `lambda1`, `lambda2`, the
/// extra class-2 inflow `lambda_net`, service capacity `mu` and per-user
/// mobility rate `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FreeParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda_net: f64,
    pub mu: f64,
    pub theta: f64,
}

impl FreeParams {
    pub fn new(
        lambda1: f64,
        lambda2: f64,
        lambda_net: f64,
        mu: f64,
        theta: f64,
    ) -> Result<Self, ModelError> {
        let p = FreeParams {
            lambda1,
            lambda2,
            lambda_net,
            mu,
            theta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_rate("lambda1", self.lambda1)?;
        check_rate("lambda2", self.lambda2)?;
        check_rate("lambda_net", self.lambda_net)?;
        check_rate("theta", self.theta)?;
        check_mu(self.mu)
    }

    pub fn rho1(&self) -> f64 {
        self.lambda1 / self.mu
    }

    pub fn rho2(&self) -> f64 {
        self.lambda2 / self.mu
    }

    pub fn rho(&self) -> f64 {
        self.rho1() + self.rho2()
    }

    /// Total class-2 arrival rate `lambda2 + lambda_net`.
    pub fn lambda_tot(&self) -> f64 {
        self.lambda2 + self.lambda_net
    }

    pub fn with_lambda_net(&self, lambda_net: f64) -> Self {
        FreeParams { lambda_net, ..*self }
    }
}

/// Parameters of the constrained model, whose `lambda_net` is fixed by the
/// balance equation `lambda_net = imbalance_beta * theta * E[X2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConstrainedParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub mu: f64,
    pub theta: f64,
    pub imbalance_beta: f64,
}

impl ConstrainedParams {
    /// Balanced cell (`imbalance_beta = 1`).
    pub fn new(lambda1: f64, lambda2: f64, mu: f64, theta: f64) -> Result<Self, ModelError> {
        Self::with_beta(lambda1, lambda2, mu, theta, 1.0)
    }

    pub fn with_beta(
        lambda1: f64,
        lambda2: f64,
        mu: f64,
        theta: f64,
        imbalance_beta: f64,
    ) -> Result<Self, ModelError> {
        let p = ConstrainedParams {
            lambda1,
            lambda2,
            mu,
            theta,
            imbalance_beta,
        };
        p.validate()?;
        Ok(p)
    }

    /// Heavy-traffic parameterization: `lambda1 = p rho mu`, `lambda2 = (1 - p) rho mu`.
    pub fn from_load(rho: f64, mix: f64, mu: f64, theta: f64) -> Result<Self, ModelError> {
        if !(0.0..=1.0).contains(&mix) {
            return Err(ModelError::InvalidParams(format!(
                "class mix must lie in [0, 1], got {mix}"
            )));
        }
        Self::new(mix * rho * mu, (1.0 - mix) * rho * mu, mu, theta)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        check_rate("lambda1", self.lambda1)?;
        check_rate("lambda2", self.lambda2)?;
        check_rate("theta", self.theta)?;
        check_mu(self.mu)?;
        if !(self.imbalance_beta.is_finite() && self.imbalance_beta > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "imbalance_beta must be finite and positive, got {}",
                self.imbalance_beta
            )));
        }
        Ok(())
    }

    pub fn rho1(&self) -> f64 {
        self.lambda1 / self.mu
    }

    pub fn rho(&self) -> f64 {
        (self.lambda1 + self.lambda2) / self.mu
    }

    /// The free model seen by a cell receiving `lambda_net` from its neighbours.
    pub fn free(&self, lambda_net: f64) -> FreeParams {
        FreeParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda_net,
            mu: self.mu,
            theta: self.theta,
        }
    }
}

/// Free parameters plus the coupling slack `epsilon` and the integer
/// threshold `ell = ceil((1 + epsilon) lambda_tot / theta)`, at least 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CouplingParams {
    pub base: FreeParams,
    pub epsilon: f64,
    pub ell: u64,
}

/// Default coupling slack.
pub const DEFAULT_EPSILON: f64 = 0.1;

impl CouplingParams {
    pub fn new(base: FreeParams, epsilon: f64) -> Result<Self, ModelError> {
        base.validate()?;
        if !(base.theta > 0.0) {
            return Err(ModelError::Precondition(
                "coupling constructions need theta > 0".into(),
            ));
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(ModelError::InvalidParams(format!(
                "epsilon must be finite and positive, got {epsilon}"
            )));
        }
        let x = (1.0 + epsilon) * base.lambda_tot() / base.theta;
        // absorb representation error so that e.g. 1.1 * 10 rounds up to 11
        let ell = ((x * (1.0 - 1e-12)).ceil() as u64).max(1);
        Ok(CouplingParams { base, epsilon, ell })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Stability {
    PositiveRecurrent,
    NullRecurrent,
    Transient,
}

fn classify(load: f64) -> Stability {
    if load < 1.0 {
        Stability::PositiveRecurrent
    } else if load == 1.0 {
        Stability::NullRecurrent
    } else {
        Stability::Transient
    }
}

/// Recurrence class of the free model. With mobility only class 1 can pile
/// up, so `rho1` decides; without it the total load does.
pub fn stability_classify(p: &FreeParams) -> Stability {
    if p.theta > 0.0 {
        classify(p.rho1())
    } else {
        classify(p.rho() + p.lambda_net / p.mu)
    }
}

/// Limiting direction `(rho1 / (1 - rho1), 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct XiStar {
    pub xi1: f64,
    pub xi2: f64,
}

fn check_rho1(rho1: f64) -> Result<(), ModelError> {
    if (0.0..1.0).contains(&rho1) {
        Ok(())
    } else {
        Err(ModelError::Domain(format!("rho1 must lie in [0, 1), got {rho1}")))
    }
}

pub fn xi_star(rho1: f64) -> Result<XiStar, ModelError> {
    check_rho1(rho1)?;
    Ok(XiStar {
        xi1: rho1 / (1.0 - rho1),
        xi2: 1.0,
    })
}

/// `(1 - log(1 - rho1)) / theta`.
pub fn kappa(rho1: f64, theta: f64) -> Result<f64, ModelError> {
    check_rho1(rho1)?;
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(ModelError::Domain(format!("theta must be positive, got {theta}")));
    }
    Ok((1.0 - (-rho1).ln_1p()) / theta)
}

/// `1 / (x - x log x)` on `(0, 1]`.
pub fn m_of(x: f64) -> Result<f64, ModelError> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(ModelError::Domain(format!("M(x) needs 0 < x <= 1, got {x}")));
    }
    Ok(1.0 / (x - x * x.ln()))
}

/// Loads `((1 + eps rho1) / (1 + eps), (1 - eps) / (1 - eps rho1))` of the
/// two M/M/1 queues bracketing the first coordinate.
pub fn mm1_sandwich_loads(rho1: f64, epsilon: f64) -> Result<(f64, f64), ModelError> {
    if !(rho1 > 0.0 && rho1 < 1.0) {
        return Err(ModelError::Domain(format!("rho1 must lie in (0, 1), got {rho1}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(ModelError::Domain(format!(
            "epsilon must lie in (0, 1], got {epsilon}"
        )));
    }
    Ok((
        (1.0 + epsilon * rho1) / (1.0 + epsilon),
        (1.0 - epsilon) / (1.0 - epsilon * rho1),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn stability_examples() {
        let p = FreeParams::new(0.4, 0.3, 0.1, 1.0, 0.0).unwrap();
        assert_eq!(stability_classify(&p), Stability::PositiveRecurrent);
        let p = FreeParams::new(1.0, 0.3, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(stability_classify(&p), Stability::NullRecurrent);
        let p = FreeParams::new(0.9, 5.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(stability_classify(&p), Stability::PositiveRecurrent);
        let p = FreeParams::new(0.5, 0.4, 0.2, 1.0, 0.0).unwrap();
        assert_eq!(stability_classify(&p), Stability::Transient);
    }

    #[test]
    fn invalid_params_are_rejected() {
        assert!(FreeParams::new(0.1, 0.1, 0.0, -1.0, 1.0).is_err());
        assert!(FreeParams::new(-0.1, 0.1, 0.0, 1.0, 1.0).is_err());
        assert!(FreeParams::new(0.1, f64::NAN, 0.0, 1.0, 1.0).is_err());
        assert!(ConstrainedParams::with_beta(0.1, 0.1, 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn xi_star_values() {
        assert_eq!(xi_star(0.5).unwrap(), XiStar { xi1: 1.0, xi2: 1.0 });
        assert_eq!(xi_star(0.0).unwrap().xi1, 0.0);
        assert_relative_eq!(xi_star(0.9).unwrap().xi1, 9.0, max_relative = 1e-15);
        assert!(xi_star(1.0).is_err());
        assert!(xi_star(1.0 - 1e-12).unwrap().xi1 > 1e11);
    }

    #[test]
    fn kappa_and_m() {
        assert_eq!(kappa(0.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(kappa(0.5, 2.0).unwrap(), (1.0 + 2f64.ln()) / 2.0);
        assert_eq!(m_of(1.0).unwrap(), 1.0);
        // x - x log x increases on (0, 1], so M decreases
        assert!(m_of(0.5).unwrap() < m_of(0.25).unwrap());
        assert!(m_of(0.0).is_err());
        assert!(kappa(1.0, 1.0).is_err());
    }

    #[test]
    fn sandwich_loads() {
        let (plus, minus) = mm1_sandwich_loads(0.5, 0.1).unwrap();
        assert_relative_eq!(plus, 1.05 / 1.1);
        assert_relative_eq!(minus, 0.9 / 0.95);
        assert_eq!(mm1_sandwich_loads(0.5, 1.0).unwrap().0, 0.75);
        let (plus, minus) = mm1_sandwich_loads(0.5, 1e-9).unwrap();
        assert!((1.0 - plus) < 1e-8 && (1.0 - minus) < 1e-8);
        assert!(mm1_sandwich_loads(1.0, 0.1).is_err());
    }

    #[test]
    fn ell_is_rounded_up() {
        let base = FreeParams::new(0.5, 10.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(CouplingParams::new(base, 0.1).unwrap().ell, 11);
        let base = FreeParams::new(0.5, 10.0, 0.3, 1.0, 1.0).unwrap();
        assert_eq!(CouplingParams::new(base, 0.1).unwrap().ell, 12);
        let idle = FreeParams::new(0.5, 0.0, 0.0, 1.0, 1.0).unwrap();
        assert_eq!(CouplingParams::new(idle, 0.1).unwrap().ell, 1);
        let no_mobility = FreeParams::new(0.5, 1.0, 0.0, 1.0, 0.0).unwrap();
        assert!(CouplingParams::new(no_mobility, 0.1).is_err());
    }

    proptest! {
        #[test]
        fn mobile_stability_ignores_class_two(
            l1 in 0.0..3.0f64, l2 in 0.0..50.0f64, net in 0.0..50.0f64, theta in 0.01..5.0f64
        ) {
            let a = FreeParams::new(l1, l2, net, 1.0, theta).unwrap();
            let b = FreeParams::new(l1, 0.0, 0.0, 1.0, theta).unwrap();
            prop_assert_eq!(stability_classify(&a), stability_classify(&b));
        }

        #[test]
        fn xi1_matches_formula(rho1 in 0.0..0.999_999f64) {
            let xi = xi_star(rho1).unwrap();
            prop_assert_eq!(xi.xi1, rho1 / (1.0 - rho1));
            prop_assert_eq!(xi.xi2, 1.0);
        }

        #[test]
        fn m_is_decreasing(a in 1e-6..1.0f64, b in 1e-6..1.0f64) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(m_of(lo).unwrap() > m_of(hi).unwrap());
        }
    }
}
