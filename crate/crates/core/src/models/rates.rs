use statrs::distribution::{DiscreteCDF, Poisson};

use super::{stability_classify, CouplingParams, FreeParams, ModelError, Stability};
use crate::ctmc::{LatticeState, RateModel, TruncationBox};

type Out = Vec<(LatticeState, f64)>;

fn up1(s: &LatticeState) -> LatticeState {
    LatticeState::new(s.x1 + 1, s.x2)
}
fn down1(s: &LatticeState) -> LatticeState {
    LatticeState::new(s.x1 - 1, s.x2)
}
fn up2(s: &LatticeState) -> LatticeState {
    LatticeState::new(s.x1, s.x2 + 1)
}
fn down2(s: &LatticeState) -> LatticeState {
    LatticeState::new(s.x1, s.x2 - 1)
}

fn check_state(s: &LatticeState) -> Result<(), ModelError> {
    if s.x1 < 0 || s.x2 < 0 {
        return Err(ModelError::Domain(format!("state {s} has a negative coordinate")));
    }
    Ok(())
}

/// `ln(1 / tol)` clamped away from zero.
fn log_inv(tol: f64) -> f64 {
    (-tol.ln()).max(1.0)
}

/// Upper quantile guess for a Poisson-like count with mean `m`.
fn poisson_reach(m: f64, tol: f64) -> f64 {
    let l = log_inv(tol);
    m + (2.0 * l * m).sqrt() + l
}

/// Upper quantile guess for class 1 when class 2 hovers around `m2`.
///
/// Class 1 sees roughly an M/M/1 slowed down by `m2` competitors, whose
/// queue length is of order `rho1 (m2 + 1) / (1 - rho1)` with geometric tails.
fn class1_reach(rho1: f64, m2: f64, tol: f64) -> f64 {
    if rho1 <= 0.0 {
        return 0.0;
    }
    let m1 = rho1 / (1.0 - rho1) * (m2 + 1.0);
    let s1 = ((m2 + 1.0) * rho1).sqrt() / (1.0 - rho1);
    m1 + 6.0 * s1 + log_inv(tol) / -rho1.ln()
}

fn axis(reach: f64, active: bool) -> u32 {
    if active {
        (reach.ceil() as u32).saturating_add(10)
    } else {
        0
    }
}

/// Free model: PS service split between both classes plus abandonment of
/// class-2 users at rate `theta` each.
#[derive(Debug, Clone, Copy)]
pub struct FreeModel {
    pub params: FreeParams,
}

pub fn free_rates(p: FreeParams) -> FreeModel {
    FreeModel { params: p }
}

impl RateModel for FreeModel {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        check_state(s)?;
        let p = &self.params;
        out.push((up1(s), p.lambda1));
        out.push((up2(s), p.lambda_tot()));
        let n = s.total();
        if n > 0 {
            let share = p.mu / n as f64;
            if s.x1 > 0 {
                out.push((down1(s), share * s.x1 as f64));
            }
            if s.x2 > 0 {
                out.push((down2(s), share * s.x2 as f64 + p.theta * s.x2 as f64));
            }
        }
        Ok(())
    }

    fn tag(&self) -> String {
        let p = &self.params;
        format!(
            "free(lambda1={}, lambda2={}, lambda_net={}, mu={}, theta={})",
            p.lambda1, p.lambda2, p.lambda_net, p.mu, p.theta
        )
    }

    fn stability(&self) -> Option<Stability> {
        Some(stability_classify(&self.params))
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        let p = &self.params;
        if stability_classify(p) != Stability::PositiveRecurrent {
            return None;
        }
        let (r1, r2) = if p.theta > 0.0 {
            let m2 = p.lambda_tot() / p.theta;
            (class1_reach(p.rho1(), m2, tol), poisson_reach(m2, tol))
        } else {
            // product form: each marginal is geometric
            let a = p.rho1();
            let b = p.lambda_tot() / p.mu;
            let geo = |r: f64| if r > 0.0 { -tol.ln() / -r.ln() } else { 0.0 };
            (geo(a / (1.0 - b)), geo(b / (1.0 - a)))
        };
        Some(TruncationBox::new(
            axis(r1, p.lambda1 > 0.0),
            axis(r2, p.lambda_tot() > 0.0),
        ))
    }
}

/// First bounding process: class 2 only abandons, so it is an autonomous
/// M/M/infinity queue, while class 1 keeps the PS share.
#[derive(Debug, Clone, Copy)]
pub struct YTildeModel {
    pub params: FreeParams,
}

pub fn ytilde_rates(p: FreeParams) -> YTildeModel {
    YTildeModel { params: p }
}

impl RateModel for YTildeModel {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        check_state(s)?;
        let p = &self.params;
        out.push((up1(s), p.lambda1));
        out.push((up2(s), p.lambda_tot()));
        if s.x1 > 0 {
            out.push((down1(s), p.mu * s.x1 as f64 / s.total() as f64));
        }
        if s.x2 > 0 {
            out.push((down2(s), p.theta * s.x2 as f64));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        let p = &self.params;
        format!(
            "ytilde(lambda1={}, lambda_tot={}, mu={}, theta={})",
            p.lambda1,
            p.lambda_tot(),
            p.mu,
            p.theta
        )
    }

    fn stability(&self) -> Option<Stability> {
        let p = &self.params;
        if p.theta > 0.0 {
            Some(stability_classify(p))
        } else {
            // class 2 never leaves
            Some(if p.lambda_tot() > 0.0 {
                Stability::Transient
            } else {
                stability_classify(p)
            })
        }
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        let p = &self.params;
        if p.theta <= 0.0 {
            return None;
        }
        let m2 = p.lambda_tot() / p.theta;
        Some(TruncationBox::new(
            axis(class1_reach(p.rho1(), m2, tol), p.lambda1 > 0.0),
            axis(poisson_reach(m2, tol), p.lambda_tot() > 0.0),
        ))
    }
}

/// Second bounding process: class 1 is served as if `ell` class-2 users were
/// present, and only while class 2 is at most `ell`.
#[derive(Debug, Clone, Copy)]
pub struct YPrimeModel {
    pub coupling: CouplingParams,
}

pub fn yprime_rates(c: CouplingParams) -> YPrimeModel {
    YPrimeModel { coupling: c }
}

impl YPrimeModel {
    /// Long-run fraction of time with `y2 <= ell`.
    pub fn service_availability(&self) -> f64 {
        let p = &self.coupling.base;
        let m2 = p.lambda_tot() / p.theta;
        if m2 == 0.0 {
            return 1.0;
        }
        Poisson::new(m2).map_or(1.0, |d| d.cdf(self.coupling.ell))
    }
}

impl RateModel for YPrimeModel {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        check_state(s)?;
        let p = &self.coupling.base;
        let ell = self.coupling.ell;
        out.push((up1(s), p.lambda1));
        out.push((up2(s), p.lambda_tot()));
        if s.x1 > 0 && s.x2 as u64 <= ell {
            out.push((down1(s), p.mu * alpha(s.x1 as u64, ell)));
        }
        if s.x2 > 0 {
            out.push((down2(s), p.theta * s.x2 as f64));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        let p = &self.coupling.base;
        format!(
            "yprime(lambda1={}, lambda_tot={}, mu={}, theta={}, ell={})",
            p.lambda1,
            p.lambda_tot(),
            p.mu,
            p.theta,
            self.coupling.ell
        )
    }

    fn stability(&self) -> Option<Stability> {
        let p = &self.coupling.base;
        let cap = p.mu * self.service_availability();
        Some(if p.lambda1 < cap {
            Stability::PositiveRecurrent
        } else if p.lambda1 == cap {
            Stability::NullRecurrent
        } else {
            Stability::Transient
        })
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        let p = &self.coupling.base;
        let ell = self.coupling.ell as f64;
        let load = p.lambda1 / (p.mu * self.service_availability());
        if load >= 1.0 {
            return None;
        }
        Some(TruncationBox::new(
            axis(class1_reach(load, ell, tol), p.lambda1 > 0.0),
            axis(poisson_reach(p.lambda_tot() / p.theta, tol), p.lambda_tot() > 0.0),
        ))
    }
}

/// `y / (y + ell)`, with `alpha(0) = 0` even when `ell = 0`.
pub fn alpha(y: u64, ell: u64) -> f64 {
    if y == 0 {
        0.0
    } else {
        y as f64 / (y + ell) as f64
    }
}

/// `beta_delta(y) = ell delta / ((y + ell)(y + ell + delta)) = alpha(y + delta) - alpha(y)`.
///
/// Evaluated as one division of exactly representable integers (for
/// arguments below about 2^26), hence correctly rounded.
pub fn beta_rate(delta: u64, y: u64, ell: u64) -> f64 {
    if delta == 0 {
        return 0.0;
    }
    if y + ell == 0 {
        return 1.0;
    }
    let num = (ell * delta) as f64;
    let den = ((y + ell) as f64) * ((y + ell + delta) as f64);
    num / den
}

/// `|beta_delta(y) + alpha(y) - alpha(y + delta)|` in floating point.
pub fn rate_algebra_defect(delta: u64, y: u64, ell: u64) -> f64 {
    (beta_rate(delta, y, ell) + alpha(y, ell) - alpha(y + delta, ell)).abs()
}

/// Shifted M/M/infinity lower bound for class 2: `z` moves up at `lambda_tot`
/// and down at `theta (k + z)`, living on `z >= -k`.
#[derive(Debug, Clone, Copy)]
pub struct ZModel {
    pub lambda_tot: f64,
    pub theta: f64,
    pub k: u32,
}

impl ZModel {
    pub fn new(p: &FreeParams, k: u32) -> Result<Self, ModelError> {
        p.validate()?;
        if !(p.theta > 0.0) {
            return Err(ModelError::Precondition("Z process needs theta > 0".into()));
        }
        if (k as f64) < p.mu / p.theta {
            return Err(ModelError::Precondition(format!(
                "k = {k} is below mu / theta = {}",
                p.mu / p.theta
            )));
        }
        Ok(ZModel {
            lambda_tot: p.lambda_tot(),
            theta: p.theta,
            k,
        })
    }

    /// Smallest admissible `k`, namely `ceil(mu / theta)`.
    pub fn min_k(p: &FreeParams) -> u32 {
        (p.mu / p.theta).ceil() as u32
    }
}

pub fn z_rates(p: &FreeParams, k: u32) -> Result<ZModel, ModelError> {
    ZModel::new(p, k)
}

impl RateModel for ZModel {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        let k = self.k as i64;
        if s.x1 != 0 || s.x2 < -k {
            return Err(ModelError::Domain(format!(
                "Z state {s} must have x1 = 0 and x2 >= {}",
                -k
            )));
        }
        out.push((up2(s), self.lambda_tot));
        if s.x2 > -k {
            out.push((down2(s), self.theta * (k + s.x2) as f64));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        format!(
            "z(lambda_tot={}, theta={}, k={})",
            self.lambda_tot, self.theta, self.k
        )
    }

    fn stability(&self) -> Option<Stability> {
        Some(Stability::PositiveRecurrent)
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        let reach = poisson_reach(self.lambda_tot / self.theta, tol);
        Some(TruncationBox::with_offset(
            0,
            axis(reach, self.lambda_tot > 0.0),
            -(self.k as i64),
        ))
    }
}

/// M/M/1 queue on the `x1` axis.
#[derive(Debug, Clone, Copy)]
pub struct Mm1 {
    pub lambda: f64,
    pub mu: f64,
}

impl Mm1 {
    pub fn new(lambda: f64, mu: f64) -> Self {
        Mm1 { lambda, mu }
    }
}

impl RateModel for Mm1 {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        check_state(s)?;
        out.push((up1(s), self.lambda));
        if s.x1 > 0 {
            out.push((down1(s), self.mu));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        format!("mm1(lambda={}, mu={})", self.lambda, self.mu)
    }

    fn stability(&self) -> Option<Stability> {
        Some(super::classify(self.lambda / self.mu))
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        let r = self.lambda / self.mu;
        if !(r < 1.0) {
            return None;
        }
        let reach = if r > 0.0 { tol.ln() / r.ln() } else { 0.0 };
        Some(TruncationBox::new(axis(reach, self.lambda > 0.0), 0))
    }
}

/// M/M/infinity queue on the `x2` axis: arrivals at `a`, each user leaves at `theta`.
#[derive(Debug, Clone, Copy)]
pub struct MmInf {
    pub arrival: f64,
    pub theta: f64,
}

impl MmInf {
    pub fn new(arrival: f64, theta: f64) -> Self {
        MmInf { arrival, theta }
    }
}

impl RateModel for MmInf {
    type State = LatticeState;

    fn transitions(&self, s: &LatticeState, out: &mut Out) -> Result<(), ModelError> {
        check_state(s)?;
        out.push((up2(s), self.arrival));
        if s.x2 > 0 {
            out.push((down2(s), self.theta * s.x2 as f64));
        }
        Ok(())
    }

    fn tag(&self) -> String {
        format!("mminf(arrival={}, theta={})", self.arrival, self.theta)
    }

    fn stability(&self) -> Option<Stability> {
        Some(if self.theta > 0.0 || self.arrival == 0.0 {
            Stability::PositiveRecurrent
        } else {
            Stability::Transient
        })
    }

    fn box_hint(&self, tol: f64) -> Option<TruncationBox> {
        if self.theta <= 0.0 {
            return None;
        }
        let reach = poisson_reach(self.arrival / self.theta, tol);
        Some(TruncationBox::new(0, axis(reach, self.arrival > 0.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rates_of<M: RateModel<State = LatticeState>>(m: &M, s: LatticeState) -> Vec<(LatticeState, f64)> {
        let mut out = Vec::new();
        m.transitions(&s, &mut out).unwrap();
        out.retain(|&(_, r)| r > 0.0);
        out
    }

    fn rate_to<M: RateModel<State = LatticeState>>(m: &M, s: LatticeState, t: LatticeState) -> f64 {
        rates_of(m, s).iter().filter(|e| e.0 == t).map(|e| e.1).sum()
    }

    #[test]
    fn free_model_examples() {
        let m = free_rates(FreeParams::new(0.2, 0.3, 0.4, 1.0, 0.5).unwrap());
        let s = LatticeState::new(2, 2);
        assert_eq!(rate_to(&m, s, LatticeState::new(1, 2)), 0.5);
        assert_eq!(rate_to(&m, s, LatticeState::new(2, 1)), 1.5);
        assert_eq!(rates_of(&m, LatticeState::ORIGIN).len(), 2);

        let m = free_rates(FreeParams::new(0.2, 0.3, 0.0, 1.0, 1.0).unwrap());
        assert_eq!(rate_to(&m, LatticeState::new(0, 5), LatticeState::new(0, 4)), 6.0);
    }

    #[test]
    fn ytilde_examples() {
        let m = ytilde_rates(FreeParams::new(0.2, 0.3, 0.0, 1.0, 1.0).unwrap());
        let s = LatticeState::new(1, 1);
        assert_eq!(rate_to(&m, s, LatticeState::new(1, 0)), 1.0);
        assert_eq!(rate_to(&m, s, LatticeState::new(0, 1)), 0.5);
        assert_eq!(rates_of(&m, LatticeState::ORIGIN).len(), 2);
    }

    #[test]
    fn yprime_examples() {
        let base = FreeParams::new(0.5, 5.0, 0.0, 1.0, 1.0).unwrap();
        let c = CouplingParams::new(base, 0.1).unwrap();
        let ell = c.ell as i64;
        assert_eq!(ell, 6);
        let m = yprime_rates(c);
        let above = LatticeState::new(3, ell + 1);
        assert_eq!(rate_to(&m, above, LatticeState::new(2, ell + 1)), 0.0);
        let at = LatticeState::new(ell, ell);
        assert_eq!(rate_to(&m, at, LatticeState::new(ell - 1, ell)), 0.5);
        assert_eq!(rate_to(&m, at, LatticeState::new(ell, ell - 1)), ell as f64);
    }

    #[test]
    fn rate_algebra_examples() {
        assert_eq!(alpha(1, 2), 1.0 / 3.0);
        assert_eq!(beta_rate(1, 1, 2), 1.0 / 6.0);
        assert_eq!(alpha(2, 2), 0.5);
        assert_eq!(beta_rate(1, 1, 2) + alpha(1, 2), alpha(2, 2));
        assert_eq!(beta_rate(0, 7, 3), 0.0);
        assert_eq!(beta_rate(3, 0, 0), 1.0);
    }

    #[test]
    fn z_requires_k_above_mu_over_theta() {
        let p = FreeParams::new(0.5, 10.0, 0.0, 2.0, 1.0).unwrap();
        assert!(matches!(ZModel::new(&p, 1), Err(ModelError::Precondition(_))));
        assert!(ZModel::new(&p, 2).is_ok());
        assert_eq!(ZModel::min_k(&p), 2);
    }

    #[test]
    fn box_hints_skip_idle_axes() {
        let m = free_rates(FreeParams::new(0.0, 3.0, 0.0, 1.0, 1.0).unwrap());
        assert_eq!(m.box_hint(1e-8).unwrap().n1_max, 0);
        let m = free_rates(FreeParams::new(0.4, 0.0, 0.0, 1.0, 1.0).unwrap());
        assert_eq!(m.box_hint(1e-8).unwrap().n2_max, 0);
    }

    proptest! {
        #[test]
        fn alpha_increasing_beta_monotone(y in 0u64..1000, d in 1u64..1000, ell in 1u64..1000) {
            prop_assert!(alpha(y + 1, ell) > alpha(y, ell));
            prop_assert!(beta_rate(d, y + 1, ell) <= beta_rate(d, y, ell));
            prop_assert!(beta_rate(d + 1, y, ell) >= beta_rate(d, y, ell));
        }

        #[test]
        fn additive_identity_to_rounding(y in 0u64..=1000, d in 0u64..=1000, ell in 1u64..=1000) {
            let target = alpha(y + d, ell);
            prop_assert!(rate_algebra_defect(d, y, ell) <= 2.0 * f64::EPSILON * target.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn free_class2_departure_dominates_ytilde(
            x1 in 0i64..200, x2 in 0i64..200, mu in 0.1..5.0f64, theta in 0.0..5.0f64
        ) {
            let p = FreeParams::new(0.3, 0.4, 0.1, mu, theta).unwrap();
            let s = LatticeState::new(x1, x2);
            let t = LatticeState::new(x1, x2 - 1);
            prop_assert!(rate_to(&free_rates(p), s, t) >= rate_to(&ytilde_rates(p), s, t));
        }

        #[test]
        fn rates_are_finite_and_nonnegative(x1 in 0i64..500, x2 in 0i64..500) {
            let p = FreeParams::new(0.3, 0.4, 0.1, 1.0, 0.7).unwrap();
            for (_, r) in rates_of(&free_rates(p), LatticeState::new(x1, x2)) {
                prop_assert!(r.is_finite() && r >= 0.0);
            }
        }
    }
}
