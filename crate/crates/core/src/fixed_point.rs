//! Balance fixed point of the constrained model.
//!
//! For a balanced cell (`imbalance_beta = 1`) the balance equation
//! `lambda_net = theta E[X2]` is equivalent, through flow balance of the free
//! model, to `Q(lambda_net) = 1 - rho` with `Q` the empty-system probability.
//! `Q` is strictly decreasing in `lambda_net`, so the root is bracketed and
//! bisected on that form; the balance-equation residual is kept as an audit.
//! For other `imbalance_beta` the residual `beta theta E[X2] - lambda_net` is
//! bisected directly and uniqueness is not presumed.

use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{adapt_truncation, CtmcError, TruncatedDistribution, TruncationBox, TruncationOptions};
use crate::models::{free_rates, stability_classify, ConstrainedParams, FreeParams, ModelError, Stability};

#[derive(Debug, Error)]
pub enum FixedPointError {
    #[error("no solution: {0}")]
    NoSolution(String),
    #[error("free model is {stability:?} at lambda_net = {lambda_net}")]
    Unstable { stability: Stability, lambda_net: f64 },
    #[error("could not bracket the root: {reason} (history {history:?})")]
    BracketFailure {
        reason: String,
        history: Vec<BracketPoint>,
    },
    #[error(transparent)]
    Truncation(#[from] CtmcError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    /// Target for `|Q - (1 - rho)|`; the balance residual is held to `tol * mu`.
    pub tol: f64,
    /// Truncation tolerance of every inner solve; defaults to `tol / 100`.
    pub inner_tol: Option<f64>,
    pub max_states: usize,
    pub max_doublings: usize,
    pub max_bisections: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        FixedPointOptions {
            tol: 1e-8,
            inner_tol: None,
            max_states: TruncationOptions::default().max_states,
            max_doublings: 60,
            max_bisections: 200,
        }
    }
}

impl FixedPointOptions {
    pub fn with_tol(tol: f64) -> Self {
        FixedPointOptions {
            tol,
            ..Default::default()
        }
    }

    fn truncation(&self) -> TruncationOptions {
        TruncationOptions {
            tol: self.inner_tol.unwrap_or(self.tol / 100.0),
            max_states: self.max_states,
            ..Default::default()
        }
    }
}

/// One evaluation of the free model during the root search. `residual` is the
/// decreasing quantity being bisected: `Q - (1 - rho)` for a balanced cell,
/// `beta theta E[X2] - lambda_net` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BracketPoint {
    pub lambda_net: f64,
    pub q: f64,
    pub residual: f64,
}

/// Solved free model at a given `lambda_net`.
#[derive(Debug, Clone)]
pub struct QEval {
    pub lambda_net: f64,
    pub q: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub box_used: TruncationBox,
    pub boundary_mass: f64,
    pub dist: TruncatedDistribution,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointSolution {
    pub params: ConstrainedParams,
    pub lambda_net_star: f64,
    pub lambda_tot_star: f64,
    /// `|Q(lambda_net) - (1 - rho)|`.
    pub residual_prho: f64,
    /// `|lambda_net - beta theta E[X2]|`.
    pub residual_fp: f64,
    pub q: f64,
    pub mean_x1: f64,
    pub mean_x2: f64,
    pub boundary_mass: f64,
    pub box_used: TruncationBox,
    pub bracket_history: Vec<BracketPoint>,
    #[serde(skip)]
    pub dist: TruncatedDistribution,
}

fn solve_free(p: &FreeParams, opts: &TruncationOptions) -> Result<QEval, FixedPointError> {
    let stability = stability_classify(p);
    if stability != Stability::PositiveRecurrent {
        return Err(FixedPointError::Unstable {
            stability,
            lambda_net: p.lambda_net,
        });
    }
    let q = |d: &TruncatedDistribution| d.p_empty();
    let m2 = |d: &TruncatedDistribution| d.mean_x2();
    let (bx, dist) = adapt_truncation(&free_rates(*p), &[&q, &m2], opts)?;
    Ok(QEval {
        lambda_net: p.lambda_net,
        q: dist.p_empty(),
        mean_x1: dist.mean_x1(),
        mean_x2: dist.mean_x2(),
        box_used: bx,
        boundary_mass: dist.boundary_mass(),
        dist,
    })
}

/// Empty-system probability `Q(lambda_net)` of the free model built from `p`
/// (its `imbalance_beta` is ignored), solved to truncation tolerance `tol`.
pub fn q_of(lambda_net: f64, p: &ConstrainedParams, tol: f64) -> Result<QEval, FixedPointError> {
    solve_free(&p.free(lambda_net), &TruncationOptions::with_tol(tol))
}

fn evaluate(
    p: &ConstrainedParams,
    lambda_net: f64,
    opts: &TruncationOptions,
    history: &mut Vec<BracketPoint>,
) -> Result<QEval, FixedPointError> {
    let e = solve_free(&p.free(lambda_net), opts)?;
    history.push(BracketPoint {
        lambda_net,
        q: e.q,
        residual: residual(p, &e),
    });
    Ok(e)
}

fn residual(p: &ConstrainedParams, e: &QEval) -> f64 {
    if p.imbalance_beta == 1.0 {
        e.q - (1.0 - p.rho())
    } else {
        p.imbalance_beta * p.theta * e.mean_x2 - e.lambda_net
    }
}

fn finish(p: &ConstrainedParams, e: QEval, history: Vec<BracketPoint>) -> FixedPointSolution {
    FixedPointSolution {
        params: *p,
        lambda_net_star: e.lambda_net,
        lambda_tot_star: p.lambda2 + e.lambda_net,
        residual_prho: (e.q - (1.0 - p.rho())).abs(),
        residual_fp: (e.lambda_net - p.imbalance_beta * p.theta * e.mean_x2).abs(),
        q: e.q,
        mean_x1: e.mean_x1,
        mean_x2: e.mean_x2,
        boundary_mass: e.boundary_mass,
        box_used: e.box_used,
        bracket_history: history,
        dist: e.dist,
    }
}

/// Solve the balance equation for `lambda_net`.
pub fn solve_lambda_net(
    p: &ConstrainedParams,
    opts: &FixedPointOptions,
) -> Result<FixedPointSolution, FixedPointError> {
    p.validate()?;
    assert!(opts.tol > 0.0, "fixed-point tolerance must be positive");
    let inner = opts.truncation();
    let balanced = p.imbalance_beta == 1.0;
    let rho = p.rho();
    let mut history = Vec::new();

    if p.theta == 0.0 {
        if rho >= 1.0 {
            return Err(FixedPointError::NoSolution(format!(
                "theta = 0 and rho = {rho} >= 1: the free model is not positive recurrent"
            )));
        }
        let e = evaluate(p, 0.0, &inner, &mut history)?;
        return Ok(finish(p, e, history));
    }
    let stability = stability_classify(&p.free(0.0));
    if stability != Stability::PositiveRecurrent {
        return Err(FixedPointError::Unstable {
            stability,
            lambda_net: 0.0,
        });
    }
    if balanced && rho >= 1.0 {
        return Err(FixedPointError::NoSolution(format!(
            "rho = {rho} >= 1 while the empty probability stays positive"
        )));
    }

    // the residual is decreasing and nonnegative at 0
    let stop = if balanced { opts.tol } else { opts.tol * p.mu } / 2.0;
    let at_zero = evaluate(p, 0.0, &inner, &mut history)?;
    let h0 = residual(p, &at_zero);
    if h0.abs() <= stop {
        return Ok(finish(p, at_zero, history));
    }
    if h0 < 0.0 {
        return Err(FixedPointError::BracketFailure {
            reason: format!("residual {h0:e} is already negative at lambda_net = 0"),
            history,
        });
    }

    let mut lo = 0.0;
    let mut hi = (p.mu * (1.0 - rho)).max(p.mu * 1e-3);
    let mut best = at_zero;
    let mut found = false;
    for _ in 0..opts.max_doublings {
        let e = evaluate(p, hi, &inner, &mut history)?;
        let h = residual(p, &e);
        if h.abs() <= stop {
            return Ok(finish(p, e, history));
        }
        if h < 0.0 {
            found = true;
            best = e;
            break;
        }
        lo = hi;
        hi *= 2.0;
    }
    if !found {
        return Err(FixedPointError::BracketFailure {
            reason: format!(
                "residual still positive at lambda_net = {hi} after {} doublings",
                opts.max_doublings
            ),
            history,
        });
    }

    for _ in 0..opts.max_bisections {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let e = evaluate(p, mid, &inner, &mut history)?;
        let h = residual(p, &e);
        if h.abs() < residual(p, &best).abs() {
            best = e.clone();
        }
        if h.abs() <= stop {
            return Ok(finish(p, e, history));
        }
        if h > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(finish(p, best, history))
}

/// Flow-balance audit of one free-model solve.
#[derive(Debug, Clone, Serialize)]
pub struct FlowBalance {
    pub params: FreeParams,
    /// `|Q - (1 - rho - lambda_net / mu + (theta / mu) E[X2])|`.
    pub residual: f64,
    pub q: f64,
    pub mean_x2: f64,
    pub boundary_mass: f64,
    pub box_used: TruncationBox,
}

impl FlowBalance {
    /// The audit bound `max(1e-8, 10 * boundary_mass)`.
    pub fn passes(&self) -> bool {
        self.residual < 1e-8_f64.max(10.0 * self.boundary_mass)
    }
}

pub fn verify_flow_balance(
    p: &FreeParams,
    opts: &TruncationOptions,
) -> Result<FlowBalance, FixedPointError> {
    p.validate()?;
    let e = solve_free(p, opts)?;
    Ok(flow_balance_of(p, &e.dist))
}

/// Flow-balance residual of an already solved free model.
pub fn flow_balance_of(p: &FreeParams, dist: &TruncatedDistribution) -> FlowBalance {
    let q = dist.p_empty();
    let m2 = dist.mean_x2();
    let predicted = 1.0 - p.rho() - p.lambda_net / p.mu + p.theta / p.mu * m2;
    FlowBalance {
        params: *p,
        residual: (q - predicted).abs(),
        q,
        mean_x2: m2,
        boundary_mass: dist.boundary_mass(),
        box_used: dist.truncation_box(),
    }
}

/// Number of sign changes of `Q - (1 - rho)` on `points` equally spaced
/// values of `lambda_net` in `[lo, hi]`.
pub fn sign_changes(
    p: &ConstrainedParams,
    lo: f64,
    hi: f64,
    points: usize,
    tol: f64,
) -> Result<usize, FixedPointError> {
    assert!(points >= 2 && hi > lo);
    let target = 1.0 - p.rho();
    let mut signs = Vec::with_capacity(points);
    for i in 0..points {
        let l = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        let q = q_of(l, p, tol)?.q;
        signs.push((q - target).signum());
    }
    Ok(signs.windows(2).filter(|w| w[0] != w[1]).count())
}

/// `lambda_net` along increasing `theta`, with the places where it decreases
/// by more than `slack`. Reported, never asserted.
#[derive(Debug, Clone, Serialize)]
pub struct ThetaMonotonicity {
    pub thetas: Vec<f64>,
    pub lambda_net: Vec<f64>,
    pub decreases: Vec<usize>,
}

pub fn theta_monotonicity(
    base: &ConstrainedParams,
    thetas: &[f64],
    slack: f64,
    opts: &FixedPointOptions,
) -> Result<ThetaMonotonicity, FixedPointError> {
    let mut values = Vec::with_capacity(thetas.len());
    for &theta in thetas {
        let p = ConstrainedParams { theta, ..*base };
        values.push(solve_lambda_net(&p, opts)?.lambda_net_star);
    }
    let decreases = values
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] < w[0] - slack)
        .map(|(i, _)| i + 1)
        .collect();
    Ok(ThetaMonotonicity {
        thetas: thetas.to_vec(),
        lambda_net: values,
        decreases,
    })
}
