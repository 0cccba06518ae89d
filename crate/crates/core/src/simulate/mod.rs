//! Event-driven simulation: plain jump chains, the coupled construction of
//! the free model with its two bounding processes, and cycle statistics of
//! the joint chain.
//!
//! Every run is driven by [`ChaCha8Rng`] seeded from [`SimConfig::seed`],
//! with one stream per random component (see the `STREAM_*` constants), so a
//! given seed and config reproduce a run bit for bit.

mod coupling;
mod cycles;

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;
use thiserror::Error;

use crate::ctmc::{LatticeState, RateModel};
use crate::models::ModelError;
use crate::stats::{BatchedTimeAverage, Estimate};

pub use coupling::{simulate_coupled, CoupledEvent, CouplingTrace, EventKind};
pub use cycles::{
    cycle_statistics, passage_times, renewal_identity, CycleRecord, CycleStats, RenewalCheck,
};

/// Holding times.
pub const STREAM_HOLD: u64 = 0;
/// Choice of the next event.
pub const STREAM_EVENT: u64 = 1;
/// Uniform attached to each tick of the shared service clock.
pub const STREAM_SERVICE: u64 = 2;
/// Fallback choice of a departing customer in the small system.
pub const STREAM_SMALL_PICK: u64 = 3;
/// Which class-2 customer's mobility clock rang.
pub const STREAM_MOBILITY: u64 = 4;
/// Passage-time samples of the class-2 process.
pub const STREAM_PASSAGE: u64 = 5;

pub(crate) fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Run length in events. Events before `warmup_events` are simulated but not
/// measured; the rest are split into `batch_count` batches for batch-means
/// confidence intervals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimConfig {
    pub seed: u64,
    pub horizon_events: u64,
    pub warmup_events: u64,
    pub batch_count: usize,
}

impl SimConfig {
    /// Default warmup (20% of the horizon) and 32 batches.
    pub fn new(seed: u64, horizon_events: u64) -> Self {
        SimConfig {
            seed,
            horizon_events,
            warmup_events: horizon_events / 5,
            batch_count: 32,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.batch_count < 10 {
            return Err(SimError::Config(format!(
                "batch_count must be at least 10, got {}",
                self.batch_count
            )));
        }
        if self.warmup_events >= self.horizon_events {
            return Err(SimError::Config(format!(
                "warmup_events ({}) must be below horizon_events ({})",
                self.warmup_events, self.horizon_events
            )));
        }
        if self.horizon_events - self.warmup_events < self.batch_count as u64 {
            return Err(SimError::Config(
                "fewer measured events than batches".into(),
            ));
        }
        Ok(())
    }

    /// Batch of the `event`-th jump, or `None` during warmup.
    pub(crate) fn batch_of(&self, event: u64) -> Option<usize> {
        if event < self.warmup_events {
            return None;
        }
        let span = self.horizon_events - self.warmup_events;
        let b = ((event - self.warmup_events) as u128 * self.batch_count as u128 / span as u128)
            as usize;
        Some(b.min(self.batch_count - 1))
    }
}

/// Exact jump-chain simulation of a [`RateModel`]: exponential holding time
/// with the total exit rate, next state chosen proportionally to its rate.
pub struct JumpChain<'m, M: RateModel + ?Sized> {
    model: &'m M,
    state: M::State,
    time: f64,
    hold: ChaCha8Rng,
    pick: ChaCha8Rng,
    buf: Vec<(M::State, f64)>,
}

impl<'m, M: RateModel + ?Sized> JumpChain<'m, M> {
    pub fn new(model: &'m M, init: M::State, seed: u64) -> Self {
        JumpChain {
            model,
            state: init,
            time: 0.0,
            hold: stream(seed, STREAM_HOLD),
            pick: stream(seed, STREAM_EVENT),
            buf: Vec::with_capacity(8),
        }
    }

    pub fn state(&self) -> M::State {
        self.state
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    /// Perform one jump and return the time spent in the state just left, or
    /// `None` if that state is absorbing.
    pub fn step(&mut self) -> Result<Option<f64>, ModelError> {
        self.buf.clear();
        self.model.transitions(&self.state, &mut self.buf)?;
        let total: f64 = self.buf.iter().map(|e| e.1).sum();
        if !(total > 0.0) {
            return Ok(None);
        }
        let e: f64 = self.hold.sample(Exp1);
        let dt = e / total;
        let mut u = self.pick.random::<f64>() * total;
        let mut next = self.buf[self.buf.len() - 1].0;
        for &(s, r) in &self.buf {
            if u < r {
                next = s;
                break;
            }
            u -= r;
        }
        self.time += dt;
        self.state = next;
        Ok(Some(dt))
    }
}

/// An observable of a lattice state, measured as a time average.
pub type Observable<'a> = &'a dyn Fn(&LatticeState) -> f64;

#[derive(Debug, Clone, Serialize)]
pub struct PathSummary {
    pub events: u64,
    pub time: f64,
    /// The chain reached a state with no way out before the horizon.
    pub absorbed: bool,
    pub mean_x1: Estimate,
    pub mean_x2: Estimate,
    pub p_empty: Estimate,
    /// Time averages of the caller's observables, in order.
    pub extra: Vec<Estimate>,
    /// `(jump time, state entered)`, starting with `(0, init)`, when requested.
    #[serde(skip)]
    pub trajectory: Option<Vec<(f64, LatticeState)>>,
}

pub fn simulate_path<M>(model: &M, init: LatticeState, cfg: &SimConfig) -> Result<PathSummary, SimError>
where
    M: RateModel<State = LatticeState> + ?Sized,
{
    simulate_path_with(model, init, cfg, &[], false)
}

/// [`simulate_path`] with extra observables and optional trajectory recording.
pub fn simulate_path_with<M>(
    model: &M,
    init: LatticeState,
    cfg: &SimConfig,
    observables: &[Observable<'_>],
    record: bool,
) -> Result<PathSummary, SimError>
where
    M: RateModel<State = LatticeState> + ?Sized,
{
    cfg.validate()?;
    let mut chain = JumpChain::new(model, init, cfg.seed);
    let mut acc = BatchedTimeAverage::new(3 + observables.len(), cfg.batch_count);
    let mut values = vec![0.0; 3 + observables.len()];
    let mut trajectory = record.then(|| vec![(0.0, init)]);
    let mut absorbed = false;
    let mut events = 0;
    while events < cfg.horizon_events {
        let s = chain.state();
        let Some(dt) = chain.step()? else {
            absorbed = true;
            break;
        };
        if let Some(b) = cfg.batch_of(events) {
            values[0] = s.x1 as f64;
            values[1] = s.x2 as f64;
            values[2] = if s == LatticeState::ORIGIN { 1.0 } else { 0.0 };
            for (v, f) in values[3..].iter_mut().zip(observables) {
                *v = f(&s);
            }
            acc.record(b, dt, &values);
        }
        if let Some(t) = trajectory.as_mut() {
            t.push((chain.time(), chain.state()));
        }
        events += 1;
    }
    Ok(PathSummary {
        events,
        time: chain.time(),
        absorbed,
        mean_x1: acc.estimate(0),
        mean_x2: acc.estimate(1),
        p_empty: acc.estimate(2),
        extra: (0..observables.len()).map(|i| acc.estimate(3 + i)).collect(),
        trajectory,
    })
}

/// One line per event: `time x1 x2`.
pub fn write_trajectory<W: Write>(mut w: W, trajectory: &[(f64, LatticeState)]) -> io::Result<()> {
    for (t, s) in trajectory {
        writeln!(w, "{t:.17e} {} {}", s.x1, s.x2)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{build_generator, stationary_direct, TruncationBox};
    use crate::models::{free_rates, FreeParams, Mm1};

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(1, 1000).validate().is_ok());
        let mut c = SimConfig::new(1, 1000);
        c.batch_count = 5;
        assert!(c.validate().is_err());
        c.batch_count = 10;
        c.warmup_events = 1000;
        assert!(c.validate().is_err());
    }

    #[test]
    fn mm1_mean_within_ci() {
        let cfg = SimConfig::new(7, 1_000_000);
        let s = simulate_path(&Mm1::new(0.5, 1.0), LatticeState::ORIGIN, &cfg).unwrap();
        assert!(s.mean_x1.covers(1.0, 1.0), "{:?}", s.mean_x1);
        assert!(s.p_empty.covers(0.5, 1.0), "{:?}", s.p_empty);
    }

    #[test]
    fn half_width_shrinks_with_horizon() {
        let m = Mm1::new(0.5, 1.0);
        let short = simulate_path(&m, LatticeState::ORIGIN, &SimConfig::new(3, 200_000)).unwrap();
        let long = simulate_path(&m, LatticeState::ORIGIN, &SimConfig::new(3, 3_200_000)).unwrap();
        let ratio = long.mean_x1.half_width / short.mean_x1.half_width;
        // sixteen times the data: a quarter of the width, up to batch noise
        assert!(ratio > 0.12 && ratio < 0.45, "{ratio}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let p = FreeParams::new(0.3, 0.3, 0.1, 1.0, 1.0).unwrap();
        let cfg = SimConfig::new(11, 5000);
        let a = simulate_path_with(&free_rates(p), LatticeState::ORIGIN, &cfg, &[], true).unwrap();
        let b = simulate_path_with(&free_rates(p), LatticeState::ORIGIN, &cfg, &[], true).unwrap();
        assert_eq!(a.trajectory, b.trajectory);
        let c = simulate_path_with(&free_rates(p), LatticeState::ORIGIN, &SimConfig::new(12, 5000), &[], true)
            .unwrap();
        assert_ne!(a.trajectory, c.trajectory);
    }

    #[test]
    fn free_model_matches_exact_solve() {
        let p = FreeParams::new(0.3, 0.3, 0.1, 1.0, 1.0).unwrap();
        let exact = stationary_direct(&build_generator(&free_rates(p), TruncationBox::new(60, 40)).unwrap())
            .unwrap();
        let s = simulate_path(&free_rates(p), LatticeState::ORIGIN, &SimConfig::new(5, 2_000_000)).unwrap();
        assert!(s.mean_x1.covers(exact.mean_x1(), 3.0));
        assert!(s.mean_x2.covers(exact.mean_x2(), 3.0));
        assert!(s.p_empty.covers(exact.p_empty(), 3.0));
    }

    #[test]
    fn absorbing_state_stops_the_run() {
        let s = simulate_path(&Mm1::new(0.0, 1.0), LatticeState::new(3, 0), &SimConfig::new(1, 100)).unwrap();
        assert!(s.absorbed);
        assert_eq!(s.events, 3);
    }

    #[test]
    fn trajectory_dump_has_one_line_per_event() {
        let cfg = SimConfig::new(2, 100);
        let s = simulate_path_with(&Mm1::new(0.5, 1.0), LatticeState::ORIGIN, &cfg, &[], true).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, s.trajectory.as_ref().unwrap()).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 101);
    }
}
