//! Exit gate: one PASS/FAIL line per acceptance criterion, each with its
//! wall-clock time against the desk-scale budget. Runs sequentially so the
//! timings are honest. The process fails if any criterion fails.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mobps_core::ctmc::{build_generator, stationary_direct};
use mobps_core::fixed_point::{solve_lambda_net, verify_flow_balance};
use mobps_core::htlab::{decay_extrapolate, sweep_lambda_tot, sweep_rho, theta_zero_ht};
use mobps_core::models::{
    alpha, beta_rate, mm1_stationary, mminfty_stationary, rate_algebra_defect, z_rates, Mm1, MmInf, ZModel,
};
use mobps_core::simulate::{renewal_identity, simulate_coupled};
use mobps_core::{
    ConstrainedParams, CouplingParams, FixedPointError, FixedPointOptions, FreeParams, HtOptions, LatticeState,
    RowStatus, SimConfig, TruncationBox, TruncationOptions,
};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Truncated M/M/1, M/M/infinity and the shifted Z process against closed forms.
fn c1_oracles() -> Outcome {
    let d = stationary_direct(&build_generator(&Mm1::new(1.0, 2.0), TruncationBox::new(60, 0)).map_err(err)?)
        .map_err(err)?;
    let g = mm1_stationary(0.5).map_err(err)?;
    let mm1 = (0..=60)
        .map(|n| (d.prob(&LatticeState::new(n, 0)) - g.pmf(n as u64)).abs())
        .fold(0.0, f64::max);

    let d = stationary_direct(&build_generator(&MmInf::new(10.0, 1.0), TruncationBox::new(0, 80)).map_err(err)?)
        .map_err(err)?;
    let law = mminfty_stationary(10.0).map_err(err)?;
    let mminf = d
        .marginal_x2()
        .iter()
        .enumerate()
        .map(|(n, p)| (p - law.pmf(n as u64)).abs())
        .fold(0.0, f64::max);

    let p = FreeParams::new(0.5, 5.0, 0.0, 1.0, 1.0).map_err(err)?;
    let k = ZModel::min_k(&p);
    let bx = TruncationBox::with_offset(0, 60, -(k as i64));
    let d = stationary_direct(&build_generator(&z_rates(&p, k).map_err(err)?, bx).map_err(err)?).map_err(err)?;
    let z = (d.prob(&LatticeState::ORIGIN) - mminfty_stationary(5.0).map_err(err)?.pmf(k as u64)).abs();

    ensure(
        mm1.max(mminf).max(z) < 1e-10,
        format!("max |error| mm1 {mm1:.1e}, mminf {mminf:.1e}, z {z:.1e} (tol 1e-10)"),
    )
}

/// Flow balance on 20 random stable free-model parameter sets.
fn c2_flow_balance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..20 {
        let mu = rng.random_range(0.5..2.0);
        let theta = rng.random_range(0.2..2.0);
        let p = FreeParams::new(
            mu * rng.random_range(0.05..0.9),
            rng.random_range(0.1..4.0),
            rng.random_range(0.0..2.0),
            mu,
            theta,
        )
        .map_err(err)?;
        let fb = verify_flow_balance(&p, &TruncationOptions::with_tol(1e-10)).map_err(err)?;
        worst = worst.max(fb.residual / 1e-8_f64.max(10.0 * fb.boundary_mass));
        failures += usize::from(!fb.passes());
    }
    ensure(
        failures == 0,
        format!("20 sets, {failures} failures, worst residual / bound {worst:.2e}"),
    )
}

/// Balance fixed point on the three reference sets, plus its two edge cases.
fn c3_fixed_point() -> Outcome {
    let opts = FixedPointOptions::default();
    let mut prho: f64 = 0.0;
    let mut fp: f64 = 0.0;
    for (l1, l2) in [(0.3, 0.3), (0.5, 0.2), (0.2, 0.6)] {
        let s = solve_lambda_net(&ConstrainedParams::new(l1, l2, 1.0, 1.0).map_err(err)?, &opts).map_err(err)?;
        prho = prho.max(s.residual_prho);
        fp = fp.max(s.residual_fp);
    }
    let zero = solve_lambda_net(&ConstrainedParams::new(0.3, 0.3, 1.0, 0.0).map_err(err)?, &opts)
        .map_err(err)?
        .lambda_net_star;
    let critical = match ConstrainedParams::new(0.5, 0.5, 1.0, 1.0) {
        Ok(p) => matches!(solve_lambda_net(&p, &opts), Err(FixedPointError::NoSolution(_))),
        Err(_) => false,
    };
    ensure(
        prho < 1e-8 && fp < 1e-6 && zero == 0.0 && critical,
        format!(
            "max |Q - (1 - rho)| {prho:.1e} (tol 1e-8), max |lambda_net - theta E[X2]| {fp:.1e} (tol 1e-6), \
             theta=0 gives {zero}, rho=1 NoSolution {critical}"
        ),
    )
}

/// Product-form heavy traffic at rho = 0.99.
fn c4_theta_zero() -> Outcome {
    let base = ConstrainedParams::new(0.25, 0.25, 1.0, 0.0).map_err(err)?;
    let rows = theta_zero_ht(&base, &[0.99], &HtOptions::default()).map_err(err)?;
    let r = &rows[0];
    let band = |x: f64| (0.45..=0.55).contains(&x);
    ensure(
        r.status == RowStatus::Valid
            && band(r.scaled_mean1)
            && band(r.scaled_mean2)
            && r.geometric_defect <= 1e-10,
        format!(
            "(1 - rho) E[X1] {:.4}, (1 - rho) E[X2] {:.4} (band [0.45, 0.55]), geometric defect {:.1e} (tol 1e-10), status {:?}",
            r.scaled_mean1, r.scaled_mean2, r.geometric_defect, r.status
        ),
    )
}

/// Fluid limit of the free model as lambda_tot grows.
fn c5_fluid_limit() -> Outcome {
    let base = FreeParams::new(0.5, 1.0, 0.0, 1.0, 1.0).map_err(err)?;
    let rows = sweep_lambda_tot(&base, &[50.0, 100.0, 200.0], &HtOptions::default()).map_err(err)?;
    let valid = rows.iter().all(|r| r.status == RowStatus::Valid);
    let x2_ok = rows.iter().all(|r| (r.scaled_x2 - 1.0).abs() <= 0.02);
    let xi1 = rows[0].xi1_over_theta * rows[0].theta;
    let gaps: Vec<f64> = rows.iter().map(|r| (r.scaled_x1 - xi1).abs() / xi1).collect();
    let x1_ok = gaps[2] <= 0.15;
    let monotone = gaps.windows(2).all(|w| w[1] < w[0]);
    let fmt = |v: Vec<f64>| v.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
    ensure(
        valid && x2_ok && x1_ok && monotone,
        format!(
            "E[X2]/lambda_tot [{}] (within 2%), E[X1]/lambda_tot [{}] vs xi1 {xi1} (within 15% at 200, monotone {monotone})",
            fmt(rows.iter().map(|r| r.scaled_x2).collect()),
            fmt(rows.iter().map(|r| r.scaled_x1).collect()),
        ),
    )
}

/// Exponential decay rate of the empty probability.
fn c6_decay() -> Outcome {
    let base = FreeParams::new(0.5, 1.0, 0.0, 1.0, 1.0).map_err(err)?;
    let rows = sweep_lambda_tot(&base, &[25.0, 50.0, 100.0, 200.0], &HtOptions::default()).map_err(err)?;
    let fit = decay_extrapolate(&rows).map_err(err)?;
    let theta = base.theta;
    let kappa = rows[0].kappa;
    let rs: Vec<String> = rows.iter().map(|r| format!("{:.4}", r.r)).collect();
    ensure(
        rows.iter().all(|r| r.status == RowStatus::Valid) && fit.increasing && fit.r_inf >= 0.95 / theta,
        format!(
            "r [{}] increasing {}, extrapolated {:.4} (bound {:.4}); conjecture kappa {:.4}, gap {:+.4}",
            rs.join(", "),
            fit.increasing,
            fit.r_inf,
            0.95 / theta,
            kappa,
            fit.r_inf - kappa
        ),
    )
}

/// Pathwise dominance of the three coupled processes.
fn c7_dominance() -> Outcome {
    let c = CouplingParams::new(FreeParams::new(0.5, 3.0, 0.0, 1.0, 1.0).map_err(err)?, 0.1).map_err(err)?;
    let mut violations = 0;
    let mut events = 0;
    for seed in 0..100 {
        let t = simulate_coupled(&c, &SimConfig::new(seed, 10_000), false).map_err(err)?;
        violations += t.violations;
        events += t.events;
    }
    ensure(
        violations == 0,
        format!("100 seeds, {events} events, {violations} violations"),
    )
}

/// The rate identity, as integers and in floating point, over [0, 200]^3.
fn c8_rate_algebra() -> Outcome {
    let n = 200u64;
    let mut integer_failures = 0u64;
    let mut worst_ulps: f64 = 0.0;
    for ell in 0..=n {
        for y in 0..=n {
            for delta in 0..=n {
                // (y + delta)(y + ell) - y (y + delta + ell) == ell delta
                if (y + delta) * (y + ell) - y * (y + delta + ell) != ell * delta {
                    integer_failures += 1;
                }
                let ulp = f64::EPSILON * alpha(y + delta, ell).max(f64::MIN_POSITIVE);
                worst_ulps = worst_ulps.max(rate_algebra_defect(delta, y, ell) / ulp);
                if beta_rate(delta, y, ell) < 0.0 {
                    integer_failures += 1;
                }
            }
        }
    }
    ensure(
        integer_failures == 0 && worst_ulps <= 2.0,
        format!("{} triples, {integer_failures} integer failures, worst float defect {worst_ulps:.2} eps (tol 2)", (n + 1).pow(3)),
    )
}

/// Renewal identity over regeneration cycles of the class-2 count.
fn c9_cycles() -> Outcome {
    let c = CouplingParams::new(FreeParams::new(0.5, 5.0, 0.0, 1.0, 1.0).map_err(err)?, 0.1).map_err(err)?;
    let cfg = SimConfig {
        warmup_events: 10_000,
        ..SimConfig::new(9, 100_000_000)
    };
    let phi = |x: i64| x.min(20) as f64;
    let r = renewal_identity(&c, 2000, &cfg, &phi, 4000).map_err(err)?;
    ensure(
        r.cycles >= 2000 && r.passes(3.0),
        format!(
            "{} cycles; time average {:.4} vs cycle ratio {:.4}, z {:.2}; E(sigma) {:.4} vs E(tau) + E(return) {:.4}, z {:.2} (tol 3)",
            r.cycles,
            r.time_average.mean,
            r.cycle_ratio.mean,
            r.ratio_z,
            r.e_sigma.mean,
            r.e_tau.mean + r.e_sigma_from_above.mean,
            r.passage_z
        ),
    )
}

/// Logarithmic heavy-traffic bound for the constrained model.
fn c10_log_bound() -> Outcome {
    let base = ConstrainedParams::new(0.25, 0.25, 1.0, 1.0).map_err(err)?;
    let theta = base.theta;
    let rows = sweep_rho(&base, &[0.99, 0.999, 0.9999], &HtOptions::default()).map_err(err)?;
    let bound_ok = rows[1..]
        .iter()
        .all(|r| r.status == RowStatus::Valid && r.scaled2 <= 1.1 && r.ratio_tot <= 1.1 * theta);
    let conjecture = rows.iter().all(|r| r.conjecture1.is_finite() && r.conjecture2.is_finite());
    let cells: Vec<String> = rows
        .iter()
        .map(|r| format!("rho {} scaled2 {:.4} ratio_tot {:.4} {:?}", r.rho, r.scaled2, r.ratio_tot, r.status))
        .collect();
    ensure(
        bound_ok && conjecture,
        format!("{} (bounds 1.1, 1.1 theta); conjecture column filled {conjecture}", cells.join("; ")),
    )
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 10] = [
        ("solver oracles", Duration::from_secs(1), c1_oracles),
        ("flow balance", Duration::from_secs(30), c2_flow_balance),
        ("fixed point", Duration::from_secs(120), c3_fixed_point),
        ("theta = 0 heavy traffic", Duration::from_secs(60), c4_theta_zero),
        ("fluid limit", Duration::from_secs(300), c5_fluid_limit),
        ("empty-probability decay", Duration::from_secs(300), c6_decay),
        ("coupling dominance", Duration::from_secs(120), c7_dominance),
        ("rate algebra", Duration::from_secs(1), c8_rate_algebra),
        ("cycle identity", Duration::from_secs(300), c9_cycles),
        ("logarithmic bound", Duration::from_secs(600), c10_log_bound),
    ];
    let mut failed = 0;
    for (i, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let took = start.elapsed();
        let in_budget = took <= *budget;
        let (ok, detail) = match outcome {
            Ok(d) => (in_budget, d),
            Err(d) => (false, d),
        };
        failed += usize::from(!ok);
        println!(
            "{} {:>2} {name}: {detail} [{:.2} s, budget {} s{}]",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            took.as_secs_f64(),
            budget.as_secs(),
            if in_budget { "" } else { ", over budget" }
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
