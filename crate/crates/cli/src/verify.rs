//! Invariant battery behind `mobps verify`: solver oracles, flow balance on
//! random stable parameters, the balance fixed point, the rate algebra and
//! coupling dominance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use mobps_core::ctmc::{build_generator, stationary_direct, TruncationBox};
use mobps_core::fixed_point::{solve_lambda_net, verify_flow_balance, FixedPointOptions};
use mobps_core::models::{
    alpha, mm1_stationary, mminfty_stationary, rate_algebra_defect, z_rates, ConstrainedParams,
    CouplingParams, FreeParams, Mm1, MmInf, ZModel,
};
use mobps_core::simulate::{simulate_coupled, SimConfig};
use mobps_core::TruncationOptions;

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub check: String,
    /// Worst observed value of the checked quantity.
    pub value: f64,
    pub bound: f64,
    pub passed: bool,
    pub note: String,
}

fn check(name: &str, value: f64, bound: f64, note: impl Into<String>) -> Check {
    Check {
        check: name.into(),
        value,
        bound,
        passed: value <= bound,
        note: note.into(),
    }
}

fn failed(name: &str, err: impl std::fmt::Display) -> Check {
    Check {
        check: name.into(),
        value: f64::NAN,
        bound: f64::NAN,
        passed: false,
        note: err.to_string(),
    }
}

fn mm1_oracle() -> Check {
    let name = "mm1_geometric";
    let run = || -> Result<f64, Box<dyn std::error::Error>> {
        let d = stationary_direct(&build_generator(&Mm1::new(1.0, 2.0), TruncationBox::new(60, 0))?)?;
        let g = mm1_stationary(0.5)?;
        Ok((0..=60u64)
            .map(|n| (d.prob(&mobps_core::LatticeState::new(n as i64, 0)) - g.pmf(n)).abs())
            .fold(0.0, f64::max))
    };
    run().map_or_else(|e| failed(name, e), |v| check(name, v, 1e-10, "lambda=1, mu=2, n=60"))
}

fn mminf_oracle() -> Check {
    let name = "mminf_poisson";
    let run = || -> Result<f64, Box<dyn std::error::Error>> {
        let d = stationary_direct(&build_generator(&MmInf::new(10.0, 1.0), TruncationBox::new(0, 80))?)?;
        let law = mminfty_stationary(10.0)?;
        Ok(d.marginal_x2()
            .iter()
            .enumerate()
            .map(|(n, p)| (p - law.pmf(n as u64)).abs())
            .fold(0.0, f64::max))
    };
    run().map_or_else(|e| failed(name, e), |v| check(name, v, 1e-10, "a=10, n=80"))
}

fn z_oracle() -> Check {
    let name = "z_empty_probability";
    let run = || -> Result<f64, Box<dyn std::error::Error>> {
        let p = FreeParams::new(0.5, 5.0, 0.0, 1.0, 1.0)?;
        let k = ZModel::min_k(&p);
        let z = z_rates(&p, k)?;
        let d = stationary_direct(&build_generator(&z, TruncationBox::with_offset(0, 60, -(k as i64)))?)?;
        let exact = mminfty_stationary(5.0)?.pmf(k as u64);
        Ok((d.prob(&mobps_core::LatticeState::ORIGIN) - exact).abs())
    };
    run().map_or_else(|e| failed(name, e), |v| check(name, v, 1e-10, "lambda_tot=5, theta=1"))
}

/// Worst defect relative to `eps * alpha(y + delta)`, over `0..=n` cubed.
pub fn rate_algebra(n: u64) -> Check {
    let mut worst: f64 = 0.0;
    for ell in 0..=n {
        for y in 0..=n {
            for delta in 0..=n {
                let scale = f64::EPSILON * alpha(y + delta, ell).max(f64::MIN_POSITIVE);
                worst = worst.max(rate_algebra_defect(delta, y, ell) / scale);
            }
        }
    }
    check("rate_algebra", worst, 2.0, format!("defect in units of eps * alpha, ell, y, delta <= {n}"))
}

/// Flow balance on `n` random stable parameter sets.
pub fn flow_balance(n: usize, seed: u64) -> Check {
    let name = "flow_balance";
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let mu = rng.random_range(0.5..2.0);
        let theta = rng.random_range(0.2..2.0);
        let p = FreeParams::new(
            mu * rng.random_range(0.05..0.9),
            rng.random_range(0.1..4.0),
            rng.random_range(0.0..2.0),
            mu,
            theta,
        );
        let fb = p
            .map_err(|e| e.to_string())
            .and_then(|p| verify_flow_balance(&p, &TruncationOptions::with_tol(1e-10)).map_err(|e| e.to_string()));
        match fb {
            Ok(fb) => worst = worst.max(fb.residual / 1e-8_f64.max(10.0 * fb.boundary_mass)),
            Err(e) => return failed(name, e),
        }
    }
    Check {
        passed: worst < 1.0,
        ..check(name, worst, 1.0, format!("residual / max(1e-8, 10 boundary mass), {n} sets"))
    }
}

fn fixed_point() -> Check {
    let name = "fixed_point";
    let mut worst: f64 = 0.0;
    for (l1, l2) in [(0.3, 0.3), (0.5, 0.2), (0.2, 0.6)] {
        let s = ConstrainedParams::new(l1, l2, 1.0, 1.0)
            .map_err(|e| e.to_string())
            .and_then(|p| solve_lambda_net(&p, &FixedPointOptions::default()).map_err(|e| e.to_string()));
        match s {
            Ok(s) => worst = worst.max(s.residual_prho / 1e-8).max(s.residual_fp / 1e-6),
            Err(e) => return failed(name, e),
        }
    }
    check(name, worst, 1.0, "max of |Q - (1 - rho)| / 1e-8 and |lambda_net - theta E[X2]| / 1e-6")
}

fn dominance(seeds: u64) -> Check {
    let name = "coupling_dominance";
    let c = FreeParams::new(0.5, 3.0, 0.0, 1.0, 1.0).and_then(|p| CouplingParams::new(p, 0.1));
    let c = match c {
        Ok(c) => c,
        Err(e) => return failed(name, e),
    };
    let mut violations = 0;
    for seed in 0..seeds {
        match simulate_coupled(&c, &SimConfig::new(seed, 10_000), false) {
            Ok(t) => violations += t.violations,
            Err(e) => return failed(name, e),
        }
    }
    check(name, violations as f64, 0.0, format!("{seeds} seeds x 1e4 events"))
}

/// Run the whole battery; `seed` drives the random parameter sets.
pub fn battery(seed: u64) -> Vec<Check> {
    vec![
        mm1_oracle(),
        mminf_oracle(),
        z_oracle(),
        rate_algebra(200),
        flow_balance(20, seed),
        fixed_point(),
        dominance(100),
    ]
}
