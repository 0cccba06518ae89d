//! Command execution and output.

use std::fs::File;
use std::io::{self, BufWriter, Write};

use serde::Serialize;
use serde_json::{json, Value};

use mobps_core::ctmc::{adapt_truncation, RateModel, TruncatedDistribution};
use mobps_core::fixed_point::{flow_balance_of, solve_lambda_net, FixedPointError, FixedPointOptions};
use mobps_core::htlab::{
    decay_extrapolate, sweep_lambda_tot, sweep_rho, theta_zero_ht, HtOptions, RowStatus,
};
use mobps_core::models::{
    free_rates, yprime_rates, ytilde_rates, z_rates, ConstrainedParams, CouplingParams, FreeParams,
    ModelError, ZModel,
};
use mobps_core::report::{write_csv, write_json};
use mobps_core::simulate::{renewal_identity, simulate_coupled, simulate_path_with, write_trajectory, SimConfig};
use mobps_core::{CtmcError, LatticeState, TruncationOptions};

use crate::config::{Command, Format, ModelKind, RunConfig};
use crate::verify;

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Exit {
    Success = 0,
    Config = 1,
    NoSolution = 2,
    Truncation = 3,
    Audit = 4,
}

impl Exit {
    pub fn code(self) -> i32 {
        self as i32
    }

    fn of_row(status: RowStatus) -> Self {
        match status {
            RowStatus::Valid => Exit::Success,
            RowStatus::NoSolution => Exit::NoSolution,
            RowStatus::TruncationFailure | RowStatus::Error => Exit::Truncation,
            RowStatus::AuditFailed => Exit::Audit,
        }
    }
}

/// A failure before any output is produced.
#[derive(Debug)]
pub struct Failure {
    pub exit: Exit,
    pub message: String,
}

impl Failure {
    fn new(exit: Exit, message: impl ToString) -> Self {
        Failure {
            exit,
            message: message.to_string(),
        }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        let exit = match e {
            ModelError::InvalidParams(_) | ModelError::Precondition(_) | ModelError::Domain(_) => Exit::Config,
            _ => Exit::Truncation,
        };
        Failure::new(exit, e)
    }
}

impl From<CtmcError> for Failure {
    fn from(e: CtmcError) -> Self {
        let exit = match e {
            CtmcError::NotPositiveRecurrent { .. } => Exit::NoSolution,
            CtmcError::Model(ref m) => return Failure::from(m.clone()),
            _ => Exit::Truncation,
        };
        Failure::new(exit, e)
    }
}

impl From<FixedPointError> for Failure {
    fn from(e: FixedPointError) -> Self {
        let exit = match e {
            FixedPointError::NoSolution(_) | FixedPointError::Unstable { .. } | FixedPointError::BracketFailure { .. } => {
                Exit::NoSolution
            }
            FixedPointError::Truncation(c) => return Failure::from(c),
            FixedPointError::Model(m) => return Failure::from(m),
        };
        Failure::new(exit, e)
    }
}

impl From<mobps_core::SimError> for Failure {
    fn from(e: mobps_core::SimError) -> Self {
        match e {
            mobps_core::SimError::Model(m) => Failure::from(m),
            other => Failure::new(Exit::Config, other),
        }
    }
}

impl From<mobps_core::HtError> for Failure {
    fn from(e: mobps_core::HtError) -> Self {
        match e {
            mobps_core::HtError::Model(m) => Failure::from(m),
            other => Failure::new(Exit::Config, other),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::new(Exit::Config, format!("output: {e}"))
    }
}

/// Rows of one command plus the summary lines and metadata that go with them.
struct Table<T> {
    rows: Vec<T>,
    notes: Vec<String>,
    summary: Value,
    exit: Exit,
}

fn provenance(cfg: &RunConfig) -> Vec<String> {
    let mut lines = vec![
        format!("mobps {}", env!("CARGO_PKG_VERSION")),
        format!("config_hash = {}", cfg.hash()),
    ];
    lines.extend(cfg.canonical().lines().map(String::from));
    lines
}

fn emit<T: Serialize>(cfg: &RunConfig, table: Table<T>) -> Result<Exit, Failure> {
    let out: Box<dyn Write> = match &cfg.out {
        Some(path) => Box::new(File::create(path).map_err(|e| {
            Failure::new(Exit::Config, format!("cannot create {}: {e}", path.display()))
        })?),
        None => Box::new(io::stdout().lock()),
    };
    let mut w = BufWriter::new(out);
    match cfg.format {
        Format::Csv => {
            let mut comments = provenance(cfg);
            comments.extend(table.notes);
            write_csv(&mut w, &comments, &table.rows, &[("config_hash", cfg.hash())])?;
        }
        Format::Json => {
            let config: serde_json::Map<String, Value> = cfg
                .canonical()
                .lines()
                .filter_map(|l| l.split_once(" = "))
                .map(|(k, v)| (k.to_string(), Value::String(v.to_string())))
                .collect();
            let meta = json!({
                "tool": "mobps",
                "version": env!("CARGO_PKG_VERSION"),
                "config_hash": cfg.hash(),
                "seed": cfg.seed,
                "config": config,
                "summary": table.summary,
                "notes": table.notes,
            });
            write_json(&mut w, &meta, &table.rows)?;
        }
    }
    w.flush()?;
    Ok(table.exit)
}

fn free_params(cfg: &RunConfig) -> Result<FreeParams, ModelError> {
    FreeParams::new(cfg.lambda1, cfg.lambda2, cfg.lambda_net, cfg.mu, cfg.theta)
}

fn sim_config(cfg: &RunConfig, seed: u64) -> SimConfig {
    SimConfig {
        seed,
        horizon_events: cfg.horizon,
        warmup_events: cfg.warmup.unwrap_or(cfg.horizon / 5),
        batch_count: cfg.batches as usize,
    }
}

/// Execute `cfg`, writing its output. Errors that occur before any row
/// exists come back as [`Failure`].
pub fn run(cfg: &RunConfig) -> Result<Exit, Failure> {
    match cfg.command {
        Command::Stationary => emit(cfg, stationary(cfg)?),
        Command::Fixpoint => emit(cfg, fixpoint(cfg)?),
        Command::SweepRho if cfg.theta == 0.0 => emit(cfg, sweep_theta_zero(cfg)?),
        Command::SweepRho => emit(cfg, sweep_rho_cmd(cfg)?),
        Command::SweepLambda => emit(cfg, sweep_lambda(cfg)?),
        Command::Simulate => emit(cfg, simulate(cfg)?),
        Command::Couple => emit(cfg, couple(cfg)?),
        Command::Cycles => emit(cfg, cycles(cfg)?),
        Command::Verify => emit(cfg, verify_cmd(cfg)),
    }
}

#[derive(Serialize)]
struct StationaryRow {
    model: String,
    mean_x1: f64,
    mean_x2: f64,
    p_empty: f64,
    boundary_mass: f64,
    flow_residual: f64,
    states: usize,
    box_n1: u32,
    box_n2: u32,
    box_offset2: i64,
}

fn z_model(cfg: &RunConfig, p: &FreeParams) -> Result<ZModel, ModelError> {
    if p.theta <= 0.0 {
        return Err(ModelError::Precondition("the Z process needs theta > 0".into()));
    }
    let k = cfg.k.map_or(ZModel::min_k(p), |k| k as u32);
    z_rates(p, k)
}

fn solve_model(m: &dyn RateModel<State = LatticeState>, tol: f64) -> Result<TruncatedDistribution, CtmcError> {
    let m1 = |d: &TruncatedDistribution| d.mean_x1();
    let m2 = |d: &TruncatedDistribution| d.mean_x2();
    let p0 = |d: &TruncatedDistribution| d.p_empty();
    adapt_truncation(m, &[&m1, &m2, &p0], &TruncationOptions::with_tol(tol)).map(|r| r.1)
}

fn stationary(cfg: &RunConfig) -> Result<Table<StationaryRow>, Failure> {
    let p = free_params(cfg)?;
    let (tag, dist) = match cfg.model {
        ModelKind::Free => (free_rates(p).tag(), solve_model(&free_rates(p), cfg.tol)?),
        ModelKind::Ytilde => (ytilde_rates(p).tag(), solve_model(&ytilde_rates(p), cfg.tol)?),
        ModelKind::Yprime => {
            let m = yprime_rates(CouplingParams::new(p, cfg.epsilon)?);
            (m.tag(), solve_model(&m, cfg.tol)?)
        }
        ModelKind::Z => {
            let m = z_model(cfg, &p)?;
            (m.tag(), solve_model(&m, cfg.tol)?)
        }
    };
    let bx = dist.truncation_box();
    let flow_residual = if cfg.model == ModelKind::Free {
        flow_balance_of(&p, &dist).residual
    } else {
        f64::NAN
    };
    let row = StationaryRow {
        model: tag,
        mean_x1: dist.mean_x1(),
        mean_x2: dist.mean_x2(),
        p_empty: dist.p_empty(),
        boundary_mass: dist.boundary_mass(),
        flow_residual,
        states: bx.len(),
        box_n1: bx.n1_max,
        box_n2: bx.n2_max,
        box_offset2: bx.offset2,
    };
    let exit = if row.boundary_mass < cfg.tol && !(flow_residual >= 1e-8_f64.max(10.0 * row.boundary_mass)) {
        Exit::Success
    } else {
        Exit::Audit
    };
    Ok(Table {
        summary: json!({ "box": bx.to_string() }),
        rows: vec![row],
        notes: vec![],
        exit,
    })
}

#[derive(Serialize)]
struct FixpointRow {
    lambda1: f64,
    lambda2: f64,
    mu: f64,
    theta: f64,
    beta: f64,
    lambda_net: f64,
    lambda_tot: f64,
    q: f64,
    mean_x1: f64,
    mean_x2: f64,
    residual_prho: f64,
    residual_fp: f64,
    flow_residual: f64,
    boundary_mass: f64,
    evaluations: usize,
    box_n1: u32,
    box_n2: u32,
}

fn fixpoint(cfg: &RunConfig) -> Result<Table<FixpointRow>, Failure> {
    let p = ConstrainedParams::with_beta(cfg.lambda1, cfg.lambda2, cfg.mu, cfg.theta, cfg.beta)?;
    let s = solve_lambda_net(&p, &FixedPointOptions::with_tol(cfg.tol))?;
    let fb = flow_balance_of(&p.free(s.lambda_net_star), &s.dist);
    let balanced_ok = if p.imbalance_beta == 1.0 {
        s.residual_prho <= cfg.tol
    } else {
        s.residual_fp <= cfg.tol * p.mu
    };
    let exit = if fb.passes() && balanced_ok {
        Exit::Success
    } else {
        Exit::Audit
    };
    let row = FixpointRow {
        lambda1: p.lambda1,
        lambda2: p.lambda2,
        mu: p.mu,
        theta: p.theta,
        beta: p.imbalance_beta,
        lambda_net: s.lambda_net_star,
        lambda_tot: s.lambda_tot_star,
        q: s.q,
        mean_x1: s.mean_x1,
        mean_x2: s.mean_x2,
        residual_prho: s.residual_prho,
        residual_fp: s.residual_fp,
        flow_residual: fb.residual,
        boundary_mass: s.boundary_mass,
        evaluations: s.bracket_history.len(),
        box_n1: s.box_used.n1_max,
        box_n2: s.box_used.n2_max,
    };
    Ok(Table {
        summary: json!({ "bracket_history": s.bracket_history }),
        rows: vec![row],
        notes: vec![],
        exit,
    })
}

fn ht_options(cfg: &RunConfig) -> HtOptions {
    HtOptions {
        fixed_point: FixedPointOptions::with_tol(cfg.tol),
        lambda_tol: cfg.tol,
        ..Default::default()
    }
}

fn worst(statuses: impl Iterator<Item = RowStatus>) -> Exit {
    statuses.map(Exit::of_row).max().unwrap_or(Exit::Success)
}

fn sweep_base(cfg: &RunConfig) -> Result<ConstrainedParams, ModelError> {
    let b = ConstrainedParams::from_load(0.5, cfg.mix, cfg.mu, cfg.theta)?;
    ConstrainedParams::with_beta(b.lambda1, b.lambda2, b.mu, b.theta, cfg.beta)
}

fn sweep_rho_cmd(cfg: &RunConfig) -> Result<Table<mobps_core::RhoSweepRow>, Failure> {
    let rows = sweep_rho(&sweep_base(cfg)?, &cfg.rho_grid, &ht_options(cfg))?;
    Ok(Table {
        exit: worst(rows.iter().map(|r| r.status)),
        summary: Value::Null,
        notes: vec!["conjecture columns are reported for comparison only".into()],
        rows,
    })
}

fn sweep_theta_zero(cfg: &RunConfig) -> Result<Table<mobps_core::ThetaZeroRow>, Failure> {
    let rows = theta_zero_ht(&sweep_base(cfg)?, &cfg.rho_grid, &ht_options(cfg))?;
    Ok(Table {
        exit: worst(rows.iter().map(|r| r.status)),
        summary: Value::Null,
        notes: vec!["theta = 0: scaled moments against the exponential(2) limit, mean and std 1/2".into()],
        rows,
    })
}

fn sweep_lambda(cfg: &RunConfig) -> Result<Table<mobps_core::LambdaSweepRow>, Failure> {
    let base = FreeParams::new(cfg.lambda1, cfg.lambda_grid[0], 0.0, cfg.mu, cfg.theta)?;
    let rows = sweep_lambda_tot(&base, &cfg.lambda_grid, &ht_options(cfg))?;
    let (notes, summary) = match decay_extrapolate(&rows) {
        Ok(f) => (
            vec![format!(
                "decay fit r = r_inf + c log(lambda) / lambda: r_inf = {:.16e} (se {:.3e}), c = {:.16e}, rms residual {:.3e}, increasing = {}",
                f.r_inf, f.std_error, f.c, f.residual, f.increasing
            )],
            serde_json::to_value(f).unwrap_or(Value::Null),
        ),
        Err(e) => (vec![format!("decay fit unavailable: {e}")], Value::Null),
    };
    Ok(Table {
        exit: worst(rows.iter().map(|r| r.status)),
        summary,
        notes,
        rows,
    })
}

#[derive(Serialize)]
struct SimulateRow {
    model: String,
    seed: u64,
    events: u64,
    time: f64,
    absorbed: bool,
    mean_x1: f64,
    mean_x1_half_width: f64,
    mean_x2: f64,
    mean_x2_half_width: f64,
    p_empty: f64,
    p_empty_half_width: f64,
}

fn simulate(cfg: &RunConfig) -> Result<Table<SimulateRow>, Failure> {
    let p = free_params(cfg)?;
    let sc = sim_config(cfg, cfg.seed);
    let record = cfg.trace.is_some();
    let (tag, s) = match cfg.model {
        ModelKind::Free => (free_rates(p).tag(), simulate_path_with(&free_rates(p), LatticeState::ORIGIN, &sc, &[], record)?),
        ModelKind::Ytilde => (
            ytilde_rates(p).tag(),
            simulate_path_with(&ytilde_rates(p), LatticeState::ORIGIN, &sc, &[], record)?,
        ),
        ModelKind::Yprime => {
            let m = yprime_rates(CouplingParams::new(p, cfg.epsilon)?);
            (m.tag(), simulate_path_with(&m, LatticeState::ORIGIN, &sc, &[], record)?)
        }
        ModelKind::Z => {
            let m = z_model(cfg, &p)?;
            (m.tag(), simulate_path_with(&m, LatticeState::ORIGIN, &sc, &[], record)?)
        }
    };
    if let (Some(path), Some(traj)) = (&cfg.trace, &s.trajectory) {
        write_trajectory(BufWriter::new(File::create(path)?), traj)?;
    }
    let row = SimulateRow {
        model: tag,
        seed: cfg.seed,
        events: s.events,
        time: s.time,
        absorbed: s.absorbed,
        mean_x1: s.mean_x1.mean,
        mean_x1_half_width: s.mean_x1.half_width,
        mean_x2: s.mean_x2.mean,
        mean_x2_half_width: s.mean_x2.half_width,
        p_empty: s.p_empty.mean,
        p_empty_half_width: s.p_empty.half_width,
    };
    Ok(Table {
        rows: vec![row],
        notes: vec![],
        summary: Value::Null,
        exit: Exit::Success,
    })
}

#[derive(Serialize)]
struct CoupleRow {
    seed: u64,
    events: u64,
    time: f64,
    violations: u64,
    first_violation: Option<u64>,
    dominance_ok: bool,
    mean_x1: f64,
    mean_x2: f64,
    mean_ytilde1: f64,
    mean_ytilde2: f64,
    mean_yprime1: f64,
    mean_yprime2: f64,
}

fn couple(cfg: &RunConfig) -> Result<Table<CoupleRow>, Failure> {
    let c = CouplingParams::new(free_params(cfg)?, cfg.epsilon)?;
    let mut rows = Vec::with_capacity(cfg.seeds as usize);
    for i in 0..cfg.seeds {
        let seed = cfg.seed.wrapping_add(i);
        let record = i == 0 && cfg.trace.is_some();
        let t = simulate_coupled(&c, &sim_config(cfg, seed), record)?;
        if let (true, Some(path)) = (record, &cfg.trace) {
            t.write_events(BufWriter::new(File::create(path)?))?;
        }
        let [yt1, yt2] = t.mean_ytilde();
        let [yp1, yp2] = t.mean_yprime();
        rows.push(CoupleRow {
            seed,
            events: t.events,
            time: t.time,
            violations: t.violations,
            first_violation: t.first_violation,
            dominance_ok: t.dominance_ok,
            mean_x1: t.mean_x1().mean,
            mean_x2: t.mean_x2().mean,
            mean_ytilde1: yt1.mean,
            mean_ytilde2: yt2.mean,
            mean_yprime1: yp1.mean,
            mean_yprime2: yp2.mean,
        });
    }
    let violations: u64 = rows.iter().map(|r| r.violations).sum();
    eprintln!("violations: {violations}");
    Ok(Table {
        notes: vec![format!("ell = {}, violations: {violations}", c.ell)],
        summary: json!({ "ell": c.ell, "violations": violations }),
        exit: if violations == 0 { Exit::Success } else { Exit::Audit },
        rows,
    })
}

#[derive(Serialize)]
struct CyclesRow {
    ell: u64,
    cycles: usize,
    partial: bool,
    invariants_hold: bool,
    time_average: f64,
    time_average_se: f64,
    cycle_ratio: f64,
    cycle_ratio_se: f64,
    ratio_z: f64,
    e_sigma: f64,
    e_sigma_se: f64,
    e_tau: f64,
    e_tau_se: f64,
    e_sigma_from_above: f64,
    e_sigma_from_above_se: f64,
    passage_z: f64,
    passed: bool,
}

fn cycles(cfg: &RunConfig) -> Result<Table<CyclesRow>, Failure> {
    let c = CouplingParams::new(free_params(cfg)?, cfg.epsilon)?;
    let sc = SimConfig {
        warmup_events: cfg.warmup.unwrap_or(10_000.min(cfg.horizon / 2)),
        ..sim_config(cfg, cfg.seed)
    };
    let phi = |x: i64| x.min(20) as f64;
    let n = cfg.cycles as usize;
    let r = renewal_identity(&c, n, &sc, &phi, 2 * n)?;
    let passed = r.passes(3.0);
    let row = CyclesRow {
        ell: c.ell,
        cycles: r.cycles,
        partial: r.partial,
        invariants_hold: r.invariants_hold,
        time_average: r.time_average.mean,
        time_average_se: r.time_average.std_error,
        cycle_ratio: r.cycle_ratio.mean,
        cycle_ratio_se: r.cycle_ratio.std_error,
        ratio_z: r.ratio_z,
        e_sigma: r.e_sigma.mean,
        e_sigma_se: r.e_sigma.std_error,
        e_tau: r.e_tau.mean,
        e_tau_se: r.e_tau.std_error,
        e_sigma_from_above: r.e_sigma_from_above.mean,
        e_sigma_from_above_se: r.e_sigma_from_above.std_error,
        passage_z: r.passage_z,
        passed,
    };
    Ok(Table {
        notes: vec![format!("phi(x) = min(x, 20); agreement judged at 3 combined standard errors")],
        summary: json!({ "ell": c.ell }),
        exit: if passed { Exit::Success } else { Exit::Audit },
        rows: vec![row],
    })
}

fn verify_cmd(cfg: &RunConfig) -> Table<verify::Check> {
    let rows = verify::battery(cfg.seed);
    for r in &rows {
        eprintln!("{} {}", if r.passed { "PASS" } else { "FAIL" }, r.check);
    }
    Table {
        exit: if rows.iter().all(|r| r.passed) { Exit::Success } else { Exit::Audit },
        summary: Value::Null,
        notes: vec![],
        rows,
    }
}
