//! Regeneration cycles of the class-2 process at the threshold `ell`.
//!
//! A cycle starts at `sigma_k` with `Y2 = ell`, passes `tau_k`, the first
//! time `Y2 >= ell + 1`, and ends at `sigma_{k+1}`, the first return to
//! `ell` after `tau_k`. Since `Y2` is autonomous, cycle lengths are i.i.d.

use rand::Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::{simulate_path_with, stream, JumpChain, SimConfig, SimError, STREAM_PASSAGE};
use crate::ctmc::LatticeState;
use crate::models::{joint_rates, yprime_rates, CouplingParams, JointState};
use crate::stats::{batch_ratio_estimate, iid_estimate, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleRecord {
    pub sigma: f64,
    pub tau: f64,
    pub sigma_next: f64,
    /// `Y1(sigma)`.
    pub z: i64,
    /// `Y1'(sigma)`.
    pub zp: i64,
    /// `zp - z`.
    pub delta: i64,
    /// Integral of `phi(Y1)` over `[sigma, sigma_next)`.
    pub int_phi_y1: f64,
    /// Integral of `phi(Y1')` over `[sigma, sigma_next)`.
    pub int_phi_y1p: f64,
}

impl CycleRecord {
    pub fn length(&self) -> f64 {
        self.sigma_next - self.sigma
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleStats {
    pub params: CouplingParams,
    pub seed: u64,
    /// Cycles asked for.
    pub requested: usize,
    /// Fewer than `requested` cycles completed within the event cap.
    pub partial: bool,
    pub events: u64,
    pub batch_count: usize,
    pub records: Vec<CycleRecord>,
}

impl CycleStats {
    /// `E_ell(sigma)`.
    pub fn mean_cycle_length(&self) -> Estimate {
        iid_estimate(&self.records.iter().map(|r| r.length()).collect::<Vec<_>>())
    }

    /// `E_ell(tau)` from the same cycles.
    pub fn mean_time_to_tau(&self) -> Estimate {
        iid_estimate(&self.records.iter().map(|r| r.tau - r.sigma).collect::<Vec<_>>())
    }

    fn batched(&self, f: impl Fn(&CycleRecord) -> f64) -> Estimate {
        let n = self.records.len();
        let b = self.batch_count.min(n).max(1);
        let pairs: Vec<(f64, f64)> = (0..b)
            .map(|i| {
                self.records[i * n / b..(i + 1) * n / b]
                    .iter()
                    .fold((0.0, 0.0), |(num, den), r| (num + f(r), den + r.length()))
            })
            .collect();
        batch_ratio_estimate(&pairs)
    }

    /// Cycle average of the integral of `phi(Y1')` over mean cycle length.
    pub fn renewal_ratio_yprime(&self) -> Estimate {
        self.batched(|r| r.int_phi_y1p)
    }

    pub fn renewal_ratio_y1(&self) -> Estimate {
        self.batched(|r| r.int_phi_y1)
    }

    /// `sigma_k < tau_k < sigma_{k+1}`, consecutive cycles and `delta >= 0`.
    pub fn invariants_hold(&self) -> bool {
        self.records.iter().all(|r| {
            r.sigma < r.tau && r.tau < r.sigma_next && r.delta == r.zp - r.z && r.delta >= 0
        }) && self.records.windows(2).all(|w| w[0].sigma_next == w[1].sigma)
    }
}

struct Open {
    sigma: f64,
    event: u64,
    state: JointState,
    tau: Option<f64>,
    int_y1: f64,
    int_y1p: f64,
}

impl Open {
    fn start(t: f64, event: u64, s: JointState) -> Self {
        Open {
            sigma: t,
            event,
            state: s,
            tau: None,
            int_y1: 0.0,
            int_y1p: 0.0,
        }
    }
}

/// Simulate the joint chain from `(0, 0, ell)` until `n_cycles` cycles
/// starting at or after `cfg.warmup_events` have completed, or
/// `cfg.horizon_events` events have elapsed. `phi` should be bounded.
pub fn cycle_statistics(
    c: &CouplingParams,
    n_cycles: usize,
    cfg: &SimConfig,
    phi: &dyn Fn(i64) -> f64,
) -> Result<CycleStats, SimError> {
    cfg.validate()?;
    let model = joint_rates(*c);
    let ell = c.ell as i64;
    let mut chain = JumpChain::new(&model, JointState::new(0, 0, ell), cfg.seed);
    let mut open = Open::start(0.0, 0, chain.state());
    let mut records = Vec::with_capacity(n_cycles);
    let mut events = 0;

    while records.len() < n_cycles && events < cfg.horizon_events {
        let s = chain.state();
        let Some(dt) = chain.step()? else { break };
        events += 1;
        open.int_y1 += phi(s.y1) * dt;
        open.int_y1p += phi(s.y1p) * dt;
        let (t, next) = (chain.time(), chain.state());
        match open.tau {
            None if next.y2 > ell => open.tau = Some(t),
            Some(tau) if next.y2 == ell => {
                if open.event >= cfg.warmup_events {
                    records.push(CycleRecord {
                        sigma: open.sigma,
                        tau,
                        sigma_next: t,
                        z: open.state.y1,
                        zp: open.state.y1p,
                        delta: open.state.y1p - open.state.y1,
                        int_phi_y1: open.int_y1,
                        int_phi_y1p: open.int_y1p,
                    });
                }
                open = Open::start(t, events, next);
            }
            _ => {}
        }
    }

    Ok(CycleStats {
        params: *c,
        seed: cfg.seed,
        requested: n_cycles,
        partial: records.len() < n_cycles,
        events,
        batch_count: cfg.batch_count,
        records,
    })
}

/// `n` independent first-passage times of the class-2 birth-death process
/// (up at `lambda_tot`, down at `theta * y`) from `from` to `to`. The target
/// is hit when the process reaches `to` from the side of `from`.
pub fn passage_times(
    lambda_tot: f64,
    theta: f64,
    from: u64,
    to: u64,
    n: usize,
    seed: u64,
) -> Result<Vec<f64>, SimError> {
    if !(lambda_tot > 0.0 && theta > 0.0) {
        return Err(SimError::Config(format!(
            "passage times need positive rates, got lambda_tot={lambda_tot}, theta={theta}"
        )));
    }
    if from == to {
        return Ok(vec![0.0; n]);
    }
    let mut rng = stream(seed, STREAM_PASSAGE);
    let samples = (0..n)
        .map(|_| {
            let (mut y, mut t) = (from, 0.0);
            while y != to {
                let down = theta * y as f64;
                let total = lambda_tot + down;
                t += rng.sample::<f64, _>(Exp1) / total;
                if rng.random::<f64>() * total < lambda_tot {
                    y += 1;
                } else {
                    y -= 1;
                }
            }
            t
        })
        .collect();
    Ok(samples)
}

/// Both sides of the renewal identity for `phi(Y1')` plus the decomposition
/// of the mean cycle length into its two passages.
#[derive(Debug, Clone, Serialize)]
pub struct RenewalCheck {
    pub cycles: usize,
    pub partial: bool,
    pub invariants_hold: bool,
    /// Time average of `phi(Y1')` from an independent run of `Y'`.
    pub time_average: Estimate,
    /// Cycle-integral average over mean cycle length.
    pub cycle_ratio: Estimate,
    pub ratio_z: f64,
    pub e_sigma: Estimate,
    pub e_tau: Estimate,
    pub e_sigma_from_above: Estimate,
    pub passage_z: f64,
}

impl RenewalCheck {
    pub fn passes(&self, k: f64) -> bool {
        !self.partial && self.invariants_hold && self.ratio_z <= k && self.passage_z <= k
    }
}

fn z_score(a: &Estimate, b: &Estimate) -> f64 {
    (a.mean - b.mean).abs() / a.std_error.hypot(b.std_error)
}

/// Run [`cycle_statistics`], an independent time-average run of `Y'` of the
/// same length, and `passages` independent samples of each passage time.
pub fn renewal_identity(
    c: &CouplingParams,
    n_cycles: usize,
    cfg: &SimConfig,
    phi: &dyn Fn(i64) -> f64,
    passages: usize,
) -> Result<RenewalCheck, SimError> {
    let stats = cycle_statistics(c, n_cycles, cfg, phi)?;
    let cycle_ratio = stats.renewal_ratio_yprime();

    let horizon = stats.events.max(cfg.batch_count as u64 * 100);
    let tcfg = SimConfig {
        seed: cfg.seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        horizon_events: horizon + horizon / 4,
        warmup_events: horizon / 4,
        batch_count: cfg.batch_count,
    };
    let obs = |s: &LatticeState| phi(s.x1);
    let run = simulate_path_with(&yprime_rates(*c), LatticeState::ORIGIN, &tcfg, &[&obs], false)?;
    let time_average = run.extra[0];

    let p = c.base;
    let lt = p.lambda_tot();
    let tau = passage_times(lt, p.theta, c.ell, c.ell + 1, passages, tcfg.seed.wrapping_add(1))?;
    let back = passage_times(lt, p.theta, c.ell + 1, c.ell, passages, tcfg.seed.wrapping_add(2))?;
    let (e_tau, e_back) = (iid_estimate(&tau), iid_estimate(&back));
    let e_sigma = stats.mean_cycle_length();
    let sum = Estimate {
        mean: e_tau.mean + e_back.mean,
        half_width: e_tau.half_width.hypot(e_back.half_width),
        std_error: e_tau.std_error.hypot(e_back.std_error),
        samples: passages,
    };

    Ok(RenewalCheck {
        cycles: stats.records.len(),
        partial: stats.partial,
        invariants_hold: stats.invariants_hold(),
        ratio_z: z_score(&time_average, &cycle_ratio),
        time_average,
        cycle_ratio,
        passage_z: z_score(&e_sigma, &sum),
        e_sigma,
        e_tau,
        e_sigma_from_above: e_back,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::FreeParams;

    fn params() -> CouplingParams {
        CouplingParams::new(FreeParams::new(0.5, 5.0, 0.0, 1.0, 1.0).unwrap(), 0.1).unwrap()
    }

    fn phi(x: i64) -> f64 {
        x.min(20) as f64
    }

    #[test]
    fn records_are_consecutive_and_ordered() {
        let mut cfg = SimConfig::new(3, 1_000_000);
        cfg.warmup_events = 1000;
        let s = cycle_statistics(&params(), 500, &cfg, &phi).unwrap();
        assert!(!s.partial);
        assert_eq!(s.records.len(), 500);
        assert!(s.invariants_hold());
        assert!(s.records.iter().all(|r| r.delta >= 0));
    }

    #[test]
    fn event_cap_flags_partial() {
        let s = cycle_statistics(&params(), 10_000, &SimConfig::new(3, 2000), &phi).unwrap();
        assert!(s.partial);
        assert!(s.records.len() < 10_000);
    }

    #[test]
    fn first_passage_of_single_step() {
        // from 0, the first jump is up at rate lambda_tot
        let t = passage_times(2.0, 1.0, 0, 1, 200_000, 1).unwrap();
        let e = iid_estimate(&t);
        assert!(e.covers(0.5, 1.5), "{e:?}");
    }

    #[test]
    fn renewal_identity_on_small_instance() {
        let mut cfg = SimConfig::new(8, 50_000_000);
        cfg.warmup_events = 10_000;
        let r = renewal_identity(&params(), 4000, &cfg, &phi, 4000).unwrap();
        assert!(r.passes(3.0), "{r:?}");
    }
}
