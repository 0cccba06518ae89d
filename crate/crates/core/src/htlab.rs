//! Heavy-traffic and large-`lambda_tot` experiments.
//!
//! Sweeps along `rho -> 1` with a fixed class mix, sweeps of the free model
//! along `lambda_tot`, the decay-rate extrapolation, and the `theta = 0`
//! product-form branch. Every row is solved independently; a failed row is
//! kept with its status instead of aborting the sweep.

use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{adapt_truncation, TruncatedDistribution, TruncationOptions};
use crate::fixed_point::{flow_balance_of, solve_lambda_net, FixedPointError, FixedPointOptions};
use crate::models::{free_rates, kappa, xi_star, ConstrainedParams, FreeParams, ModelError};

#[derive(Debug, Error)]
pub enum HtError {
    #[error("invalid sweep: {0}")]
    Config(String),
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RowStatus {
    Valid,
    /// Solved, but the flow-balance or empty-probability audit failed.
    AuditFailed,
    NoSolution,
    TruncationFailure,
    Error,
}

impl RowStatus {
    fn of(err: &FixedPointError) -> Self {
        match err {
            FixedPointError::NoSolution(_) | FixedPointError::Unstable { .. } => RowStatus::NoSolution,
            FixedPointError::Truncation(_) => RowStatus::TruncationFailure,
            _ => RowStatus::Error,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct HtOptions {
    /// Slack of the asymptotic comparisons.
    pub tol_ht: f64,
    pub fixed_point: FixedPointOptions,
    /// Truncation tolerance of the free-model solves along `lambda_tot`.
    pub lambda_tol: f64,
    /// Truncation tolerance on `(1 - rho) E[X_i]` for `theta = 0`, where the
    /// unscaled means blow up like `1 / (1 - rho)`.
    pub theta_zero_tol: f64,
}

impl Default for HtOptions {
    fn default() -> Self {
        HtOptions {
            tol_ht: 0.1,
            fixed_point: FixedPointOptions::default(),
            lambda_tol: 1e-8,
            theta_zero_tol: 1e-3,
        }
    }
}

pub const DEFAULT_RHO_GRID: [f64; 4] = [0.9, 0.99, 0.999, 0.9999];
pub const DEFAULT_LAMBDA_GRID: [f64; 4] = [25.0, 50.0, 100.0, 200.0];

/// One point of the heavy-traffic sweep. Scaled columns divide by
/// `-log(1 - rho)`; `conjecture*` is `xi* / (1 - log(1 - rho1))`.
#[derive(Debug, Clone, Serialize)]
pub struct RhoSweepRow {
    pub rho: f64,
    pub rho1: f64,
    pub theta: f64,
    pub lambda_net: f64,
    pub lambda_tot: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub p_empty: f64,
    pub scaled1: f64,
    pub scaled2: f64,
    pub ratio_tot: f64,
    pub conjecture1: f64,
    pub conjecture2: f64,
    /// `scaled2 (1 - log(1 - rho1))`, to be read against 1.
    pub conjecture_ratio2: f64,
    pub bound1_ok: bool,
    pub bound2_ok: bool,
    pub flow_residual: f64,
    pub prho_residual: f64,
    /// `|lambda_net - beta theta E[X2]|`.
    pub fp_residual: f64,
    pub box_n1: u32,
    pub box_n2: u32,
    pub boundary_mass: f64,
    pub status: RowStatus,
    pub note: String,
}

impl RhoSweepRow {
    fn empty(p: &ConstrainedParams) -> Self {
        let nan = f64::NAN;
        RhoSweepRow {
            rho: p.rho(),
            rho1: p.rho1(),
            theta: p.theta,
            lambda_net: nan,
            lambda_tot: nan,
            mean_x1: nan,
            mean_x2: nan,
            p_empty: nan,
            scaled1: nan,
            scaled2: nan,
            ratio_tot: nan,
            conjecture1: nan,
            conjecture2: nan,
            conjecture_ratio2: nan,
            bound1_ok: false,
            bound2_ok: false,
            flow_residual: nan,
            prho_residual: nan,
            fp_residual: nan,
            box_n1: 0,
            box_n2: 0,
            boundary_mass: nan,
            status: RowStatus::Error,
            note: String::new(),
        }
    }
}

fn check_grid(grid: &[f64], lo: f64, hi: f64, what: &str) -> Result<(), HtError> {
    if grid.is_empty() {
        return Err(HtError::Config(format!("{what} grid is empty")));
    }
    if let Some(v) = grid.iter().find(|v| !(**v > lo && **v < hi)) {
        return Err(HtError::Config(format!("{what} grid value {v} outside ({lo}, {hi})")));
    }
    Ok(())
}

/// Free model with `lambda_net = 0` and `theta = 0`: product form, solved
/// with truncation judged on `(1 - rho) E[X_i]`.
fn solve_theta_zero(p: &FreeParams, tol: f64) -> Result<TruncatedDistribution, FixedPointError> {
    let scale = 1.0 - p.rho();
    let m1 = move |d: &TruncatedDistribution| scale * d.mean_x1();
    let m2 = move |d: &TruncatedDistribution| scale * d.mean_x2();
    let (_, dist) = adapt_truncation(&free_rates(*p), &[&m1, &m2], &TruncationOptions::with_tol(tol))?;
    Ok(dist)
}

fn rho_row(p: &ConstrainedParams, opts: &HtOptions) -> RhoSweepRow {
    let mut row = RhoSweepRow::empty(p);
    let solved = if p.theta == 0.0 {
        if p.rho() >= 1.0 {
            Err(FixedPointError::NoSolution(format!("theta = 0 and rho = {} >= 1", p.rho())))
        } else {
            solve_theta_zero(&p.free(0.0), opts.theta_zero_tol).map(|d| (0.0, d))
        }
    } else {
        solve_lambda_net(p, &opts.fixed_point).map(|s| (s.lambda_net_star, s.dist))
    };
    let (lambda_net, dist) = match solved {
        Ok(v) => v,
        Err(e) => {
            row.status = RowStatus::of(&e);
            row.note = e.to_string();
            return row;
        }
    };

    let free = p.free(lambda_net);
    let log_scale = -(-p.rho()).ln_1p();
    let fb = flow_balance_of(&free, &dist);
    row.lambda_net = lambda_net;
    row.lambda_tot = free.lambda_tot();
    row.mean_x1 = dist.mean_x1();
    row.mean_x2 = dist.mean_x2();
    row.p_empty = dist.p_empty();
    row.scaled1 = row.mean_x1 / log_scale;
    row.scaled2 = row.mean_x2 / log_scale;
    row.ratio_tot = row.lambda_tot / log_scale;
    row.flow_residual = fb.residual;
    row.prho_residual = (row.p_empty - (1.0 - p.rho())).abs();
    row.fp_residual = (lambda_net - p.imbalance_beta * p.theta * row.mean_x2).abs();
    let bx = dist.truncation_box();
    row.box_n1 = bx.n1_max;
    row.box_n2 = bx.n2_max;
    row.boundary_mass = dist.boundary_mass();

    match xi_star(p.rho1()) {
        Ok(xi) => {
            let damp = 1.0 - (-p.rho1()).ln_1p();
            row.conjecture1 = xi.xi1 / damp;
            row.conjecture2 = xi.xi2 / damp;
            row.conjecture_ratio2 = row.scaled2 * damp;
            row.bound1_ok = row.scaled1 <= xi.xi1 + opts.tol_ht;
            row.bound2_ok = row.scaled2 <= xi.xi2 + opts.tol_ht;
        }
        Err(e) => row.note = e.to_string(),
    }

    // theta = 0 solves are looser by design; hold them to the boundary-mass part.
    // Away from beta = 1 the empty probability is not pinned, the balance is.
    let equation_ok = if p.theta == 0.0 {
        row.prho_residual <= (10.0 * row.boundary_mass).max(1e-8)
    } else if p.imbalance_beta == 1.0 {
        row.prho_residual <= opts.fixed_point.tol
    } else {
        row.fp_residual <= opts.fixed_point.tol * p.mu
    };
    row.status = if fb.passes() && equation_ok {
        RowStatus::Valid
    } else {
        row.note = format!(
            "audit: flow residual {:e}, empty-probability residual {:e}",
            fb.residual, row.prho_residual
        );
        RowStatus::AuditFailed
    };
    row
}

/// Heavy-traffic sweep with `mu`, `theta`, `imbalance_beta` and the class
/// mix `rho1 / rho` of `base` held fixed.
pub fn sweep_rho(
    base: &ConstrainedParams,
    rho_grid: &[f64],
    opts: &HtOptions,
) -> Result<Vec<RhoSweepRow>, HtError> {
    base.validate()?;
    check_grid(rho_grid, 0.0, 1.0, "rho")?;
    let mix = base.rho1() / base.rho();
    let rows = rho_grid
        .iter()
        .map(|&rho| {
            let p = ConstrainedParams {
                lambda1: mix * rho * base.mu,
                lambda2: (1.0 - mix) * rho * base.mu,
                ..*base
            };
            rho_row(&p, opts)
        })
        .collect();
    Ok(rows)
}

/// One free-model solve at a given `lambda_tot` (all of it carried by `lambda2`).
#[derive(Debug, Clone, Serialize)]
pub struct LambdaSweepRow {
    pub lambda_tot: f64,
    pub theta: f64,
    pub rho1: f64,
    pub scaled_x1: f64,
    pub scaled_x2: f64,
    /// `-log P(0, 0) / lambda_tot`.
    pub r: f64,
    /// `-log P(X1 = 0) / lambda_tot`.
    pub r1: f64,
    pub inv_theta: f64,
    /// `(1 - log(1 - rho1)) / theta`; conjecture column.
    pub kappa: f64,
    pub xi1_over_theta: f64,
    pub xi2_over_theta: f64,
    /// `-theta log(1 - rho1)`.
    pub r1_candidate_theta: f64,
    /// `-log(1 - rho1) / theta`.
    pub r1_candidate_inv_theta: f64,
    pub box_n1: u32,
    pub box_n2: u32,
    pub boundary_mass: f64,
    pub status: RowStatus,
    pub note: String,
}

/// Exact free-model solves along `lam_grid`, with `lambda1`, `mu`, `theta`
/// from `free_base`.
pub fn sweep_lambda_tot(
    free_base: &FreeParams,
    lam_grid: &[f64],
    opts: &HtOptions,
) -> Result<Vec<LambdaSweepRow>, HtError> {
    free_base.validate()?;
    let rho1 = free_base.rho1();
    let theta = free_base.theta;
    if !(theta > 0.0) {
        return Err(HtError::Config(format!("lambda sweep needs theta > 0, got {theta}")));
    }
    let xi = xi_star(rho1)?;
    let kap = kappa(rho1, theta)?;
    check_grid(lam_grid, 0.0, f64::INFINITY, "lambda_tot")?;
    if lam_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HtError::Config("lambda_tot grid must be increasing".into()));
    }
    let log1m = (-rho1).ln_1p();

    let rows = lam_grid
        .iter()
        .map(|&lt| {
            let p = FreeParams {
                lambda2: lt,
                lambda_net: 0.0,
                ..*free_base
            };
            let mut row = LambdaSweepRow {
                lambda_tot: lt,
                theta,
                rho1,
                scaled_x1: f64::NAN,
                scaled_x2: f64::NAN,
                r: f64::NAN,
                r1: f64::NAN,
                inv_theta: 1.0 / theta,
                kappa: kap,
                xi1_over_theta: xi.xi1 / theta,
                xi2_over_theta: xi.xi2 / theta,
                r1_candidate_theta: -theta * log1m,
                r1_candidate_inv_theta: -log1m / theta,
                box_n1: 0,
                box_n2: 0,
                boundary_mass: f64::NAN,
                status: RowStatus::Error,
                note: String::new(),
            };
            let m1 = |d: &TruncatedDistribution| d.mean_x1();
            let m2 = |d: &TruncatedDistribution| d.mean_x2();
            let lp = |d: &TruncatedDistribution| d.p_empty().ln();
            let lp1 = |d: &TruncatedDistribution| d.marginal_x1()[0].ln();
            let topts = TruncationOptions::with_tol(opts.lambda_tol);
            match adapt_truncation(&free_rates(p), &[&m1, &m2, &lp, &lp1], &topts) {
                Ok((bx, d)) => {
                    row.scaled_x1 = d.mean_x1() / lt;
                    row.scaled_x2 = d.mean_x2() / lt;
                    row.r = -d.p_empty().ln() / lt;
                    row.r1 = -d.marginal_x1()[0].ln() / lt;
                    row.box_n1 = bx.n1_max;
                    row.box_n2 = bx.n2_max;
                    row.boundary_mass = d.boundary_mass();
                    row.status = RowStatus::Valid;
                }
                Err(e) => {
                    row.status = RowStatus::TruncationFailure;
                    row.note = e.to_string();
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

/// Least-squares fit of `r(lambda) = r_inf + c log(lambda) / lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub r_inf: f64,
    pub c: f64,
    pub std_error: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    pub points: usize,
    /// `r` strictly increases along the grid.
    pub increasing: bool,
}

/// Fit `r_inf + c log(lambda) / lambda` to `(lambda, r)` points with
/// strictly increasing `lambda`.
pub fn fit_decay(points: &[(f64, f64)]) -> Result<DecayFit, HtError> {
    let n = points.len();
    if n < 4 {
        return Err(HtError::DegenerateFit(format!("need at least 4 points, got {n}")));
    }
    if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(HtError::Config("lambda values must be strictly increasing".into()));
    }
    if points.iter().any(|p| !(p.0 > 0.0 && p.1.is_finite())) {
        return Err(HtError::DegenerateFit("non-finite rate or nonpositive lambda".into()));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln() / p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if !(sxx > 1e-14 * mx * mx) {
        return Err(HtError::DegenerateFit("log(lambda) / lambda barely varies".into()));
    }
    let c = sxy / sxx;
    let r_inf = my - c * mx;
    let ss: f64 = xs.iter().zip(&ys).map(|(x, y)| (y - r_inf - c * x).powi(2)).sum();
    let s2 = ss / (nf - 2.0);
    Ok(DecayFit {
        r_inf,
        c,
        std_error: (s2 * (1.0 / nf + mx * mx / sxx)).sqrt(),
        residual: (ss / nf).sqrt(),
        points: n,
        increasing: ys.windows(2).all(|w| w[1] > w[0]),
    })
}

/// [`fit_decay`] on the valid rows of a lambda sweep.
pub fn decay_extrapolate(rows: &[LambdaSweepRow]) -> Result<DecayFit, HtError> {
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == RowStatus::Valid)
        .map(|r| (r.lambda_tot, r.r))
        .collect();
    fit_decay(&points)
}

/// `theta = 0` product-form row: scaled moments against the exponential
/// limit (mean and standard deviation 1/2 per class).
#[derive(Debug, Clone, Serialize)]
pub struct ThetaZeroRow {
    pub rho: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub scaled_mean1: f64,
    pub scaled_mean2: f64,
    pub scaled_std1: f64,
    pub scaled_std2: f64,
    pub scaled_total: f64,
    /// Largest gap between the law of `x1 + x2` given `x1 + x2 <= m` and
    /// the geometric law truncated at `m`, with `m` the smaller box side.
    pub geometric_defect: f64,
    pub box_n1: u32,
    pub box_n2: u32,
    pub boundary_mass: f64,
    pub status: RowStatus,
    pub note: String,
}

/// Gap between the conditional total-count law and a truncated geometric.
pub fn geometric_total_defect(dist: &TruncatedDistribution, rho: f64) -> f64 {
    let bx = dist.truncation_box();
    let m = bx.n1_max.min(bx.n2_max) as usize;
    let law = dist.total_count_law();
    let mass: f64 = law[..=m].iter().sum();
    let norm = 1.0 - rho.powi(m as i32 + 1);
    law[..=m]
        .iter()
        .enumerate()
        .map(|(t, &p)| (p / mass - (1.0 - rho) * rho.powi(t as i32) / norm).abs())
        .fold(0.0, f64::max)
}

/// Product-form sweep at `theta = 0`, keeping the class mix and `mu` of `base`.
pub fn theta_zero_ht(
    base: &ConstrainedParams,
    rho_grid: &[f64],
    opts: &HtOptions,
) -> Result<Vec<ThetaZeroRow>, HtError> {
    if base.theta != 0.0 {
        return Err(HtError::Config(format!("theta must be 0, got {}", base.theta)));
    }
    base.validate()?;
    check_grid(rho_grid, 0.0, 1.0, "rho")?;
    let mix = base.rho1() / base.rho();
    let rows = rho_grid
        .iter()
        .map(|&rho| {
            let p = FreeParams::new(mix * rho * base.mu, (1.0 - mix) * rho * base.mu, 0.0, base.mu, 0.0);
            let mut row = ThetaZeroRow {
                rho,
                mean_x1: f64::NAN,
                mean_x2: f64::NAN,
                scaled_mean1: f64::NAN,
                scaled_mean2: f64::NAN,
                scaled_std1: f64::NAN,
                scaled_std2: f64::NAN,
                scaled_total: f64::NAN,
                geometric_defect: f64::NAN,
                box_n1: 0,
                box_n2: 0,
                boundary_mass: f64::NAN,
                status: RowStatus::Error,
                note: String::new(),
            };
            let solved = p
                .map_err(FixedPointError::from)
                .and_then(|p| solve_theta_zero(&p, opts.theta_zero_tol));
            match solved {
                Ok(d) => {
                    let s = 1.0 - rho;
                    row.mean_x1 = d.mean_x1();
                    row.mean_x2 = d.mean_x2();
                    let var1 = d.functional(|x| (x.x1 as f64 - row.mean_x1).powi(2));
                    let var2 = d.functional(|x| (x.x2 as f64 - row.mean_x2).powi(2));
                    row.scaled_mean1 = s * row.mean_x1;
                    row.scaled_mean2 = s * row.mean_x2;
                    row.scaled_std1 = s * var1.sqrt();
                    row.scaled_std2 = s * var2.sqrt();
                    row.scaled_total = row.scaled_mean1 + row.scaled_mean2;
                    row.geometric_defect = geometric_total_defect(&d, rho);
                    let bx = d.truncation_box();
                    row.box_n1 = bx.n1_max;
                    row.box_n2 = bx.n2_max;
                    row.boundary_mass = d.boundary_mass();
                    row.status = if row.geometric_defect <= 1e-10 {
                        RowStatus::Valid
                    } else {
                        row.note = format!("total-count defect {:e}", row.geometric_defect);
                        RowStatus::AuditFailed
                    };
                }
                Err(e) => {
                    row.status = RowStatus::of(&e);
                    row.note = e.to_string();
                }
            }
            row
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::mminfty_stationary;

    #[test]
    fn fit_recovers_planted_constant() {
        let pts: Vec<(f64, f64)> = [10.0, 20.0, 40.0, 80.0, 160.0]
            .iter()
            .map(|&l: &f64| (l, 1.0 + l.ln() / l))
            .collect();
        let f = fit_decay(&pts).unwrap();
        assert!((f.r_inf - 1.0).abs() < 1e-3);
        assert!((f.c - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_needs_four_sorted_points() {
        let pts = [(1.0, 0.1), (2.0, 0.2), (3.0, 0.3)];
        assert!(matches!(fit_decay(&pts), Err(HtError::DegenerateFit(_))));
        let pts = [(1.0, 0.1), (3.0, 0.2), (2.0, 0.3), (4.0, 0.4)];
        assert!(matches!(fit_decay(&pts), Err(HtError::Config(_))));
    }

    #[test]
    fn z_process_decay_limit() {
        // P(Z = 0) = P(Poisson(lambda / theta) = k), smallest k for mu = 1
        let (theta, k) = (2.0, 1u64);
        let pts: Vec<(f64, f64)> = [25.0, 50.0, 100.0, 200.0, 400.0]
            .iter()
            .map(|&l: &f64| (l, -mminfty_stationary(l / theta).unwrap().ln_pmf(k) / l))
            .collect();
        let f = fit_decay(&pts).unwrap();
        assert!(f.increasing);
        assert!((f.r_inf * theta - 1.0).abs() < 0.01, "{f:?}");
    }

    #[test]
    fn theta_zero_rows_follow_the_product_form() {
        let base = ConstrainedParams::from_load(0.5, 0.5, 1.0, 0.0).unwrap();
        let rows = theta_zero_ht(&base, &[0.5, 0.9], &HtOptions::default()).unwrap();
        for r in &rows {
            assert_eq!(r.status, RowStatus::Valid, "{r:?}");
            // each class holds half of a geometric(rho) total
            let half = 0.5 * r.rho;
            assert!((r.scaled_mean1 - half).abs() < 2e-3, "{r:?}");
            assert!((r.scaled_mean2 - half).abs() < 2e-3, "{r:?}");
        }
    }

    #[test]
    fn theta_zero_rejects_mobility() {
        let base = ConstrainedParams::from_load(0.5, 0.5, 1.0, 1.0).unwrap();
        assert!(theta_zero_ht(&base, &[0.5], &HtOptions::default()).is_err());
    }

    #[test]
    fn rho_sweep_rows_are_audited() {
        let base = ConstrainedParams::from_load(0.5, 0.5, 1.0, 1.0).unwrap();
        let rows = sweep_rho(&base, &[0.5, 0.9], &HtOptions::default()).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert_eq!(r.status, RowStatus::Valid, "{r:?}");
            assert!(r.prho_residual < 1e-8);
            assert!((0.0..=1.0).contains(&r.p_empty));
            assert!((r.lambda_tot - r.lambda_net - 0.5 * r.rho).abs() < 1e-12);
        }
    }

    #[test]
    fn failing_row_does_not_abort_sweep() {
        let base = ConstrainedParams::from_load(0.5, 0.5, 1.0, 1.0).unwrap();
        let opts = HtOptions {
            fixed_point: FixedPointOptions {
                max_states: 50,
                ..Default::default()
            },
            ..Default::default()
        };
        let rows = sweep_rho(&base, &[0.5, 0.9], &opts).unwrap();
        assert!(rows.iter().all(|r| r.status == RowStatus::TruncationFailure));
    }

    #[test]
    fn lambda_sweep_columns() {
        let base = FreeParams::new(0.5, 10.0, 0.0, 1.0, 1.0).unwrap();
        let rows = sweep_lambda_tot(&base, &[5.0, 10.0, 20.0], &HtOptions::default()).unwrap();
        for r in &rows {
            assert_eq!(r.status, RowStatus::Valid);
            assert!(r.r >= 0.0 && r.r1 >= 0.0 && r.r1 <= r.r);
            assert_eq!(r.inv_theta, 1.0);
        }
        assert!(rows.windows(2).all(|w| w[1].r > w[0].r));
        assert!(sweep_lambda_tot(&base, &[10.0, 5.0], &HtOptions::default()).is_err());
    }
}
