//! Labeled-customer coupling of the free model `X` (small system), the first
//! bounding process `Ỹ` (big system) and the thresholded process `Y'`.
//!
//! Every small-system customer is also in the big system. Per class, the big
//! system keeps a roster of shared customers (positive labels) followed by
//! extras (negative labels). Events:
//!
//! - arrivals of either class join all three processes;
//! - each class-2 customer of the big system carries a mobility clock; a
//!   shared customer leaves both systems, an extra only the big one, and
//!   `Y'_2` moves with `Ỹ_2`;
//! - a service clock of rate `mu` ticks with a uniform `U`. The big-system
//!   customer `C̃` at position `floor(U (ỹ1 + ỹ2))` of the concatenated
//!   rosters (class 1 first) is selected; `C = C̃` if shared, otherwise `C` is
//!   drawn uniformly from the small system. `C` leaves the small system, and
//!   `C̃` leaves the big system only if it is of class 1. A shared class-2 `C̃`
//!   thus becomes an extra. `Y'_1` loses a customer iff
//!   `U < y'1 / (y'1 + ell)` and `y'2 <= ell`.
//!
//! Since `ỹ1 / (ỹ1 + ỹ2)` bounds `y'1 / (y'1 + ell)` from above whenever
//! `y'1 = ỹ1` and `ỹ2 <= ell`, the shared `U` keeps `Ỹ1 <= Y'1`.

use std::io::{self, Write};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::Serialize;

use super::{
    stream, SimConfig, SimError, STREAM_EVENT, STREAM_HOLD, STREAM_MOBILITY, STREAM_SERVICE,
    STREAM_SMALL_PICK,
};
use crate::ctmc::LatticeState;
use crate::models::CouplingParams;
use crate::stats::{BatchedTimeAverage, Estimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival1,
    Arrival2,
    Mobility,
    Service,
}

/// States of the three processes right after an event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoupledEvent {
    pub time: f64,
    pub kind: EventKind,
    pub x: LatticeState,
    pub ytilde: LatticeState,
    pub yprime: LatticeState,
}

#[derive(Debug, Clone, Serialize)]
pub struct CouplingTrace {
    pub params: CouplingParams,
    pub seed: u64,
    pub events: u64,
    pub time: f64,
    /// No event produced `x > ỹ` or `ỹ > y'` in some coordinate.
    pub dominance_ok: bool,
    pub violations: u64,
    pub first_violation: Option<u64>,
    /// Time averages after warmup, in the order
    /// `x1, x2, 1{x = 0}, ỹ1, ỹ2, y'1, y'2`.
    pub averages: Vec<Estimate>,
    /// Every event, when recording was requested.
    #[serde(skip)]
    pub trace: Option<Vec<CoupledEvent>>,
}

impl CouplingTrace {
    pub fn mean_x1(&self) -> Estimate {
        self.averages[0]
    }
    pub fn mean_x2(&self) -> Estimate {
        self.averages[1]
    }
    pub fn p_empty(&self) -> Estimate {
        self.averages[2]
    }
    pub fn mean_ytilde(&self) -> [Estimate; 2] {
        [self.averages[3], self.averages[4]]
    }
    pub fn mean_yprime(&self) -> [Estimate; 2] {
        [self.averages[5], self.averages[6]]
    }

    /// One line per event: `time kind x1 x2 ỹ1 ỹ2 y'1 y'2`.
    pub fn write_events<W: Write>(&self, mut w: W) -> io::Result<()> {
        for e in self.trace.iter().flatten() {
            writeln!(
                w,
                "{:.17e} {:?} {} {} {} {} {} {}",
                e.time,
                e.kind,
                e.x.x1,
                e.x.x2,
                e.ytilde.x1,
                e.ytilde.x2,
                e.yprime.x1,
                e.yprime.x2
            )?;
        }
        Ok(())
    }
}

/// Shared customers then extras, for one class of the big system.
#[derive(Debug, Default)]
struct Roster {
    shared: Vec<i64>,
    extra: Vec<i64>,
}

impl Roster {
    fn len(&self) -> usize {
        self.shared.len() + self.extra.len()
    }

    fn get(&self, idx: usize) -> i64 {
        if idx < self.shared.len() {
            self.shared[idx]
        } else {
            self.extra[idx - self.shared.len()]
        }
    }

    fn position(&self, label: i64) -> usize {
        if label > 0 {
            self.shared.iter().position(|&l| l == label)
        } else {
            self.extra
                .iter()
                .position(|&l| l == label)
                .map(|i| i + self.shared.len())
        }
        .expect("label present in roster")
    }

    fn remove_at(&mut self, idx: usize) -> i64 {
        if idx < self.shared.len() {
            self.shared.swap_remove(idx)
        } else {
            self.extra.swap_remove(idx - self.shared.len())
        }
    }

    /// The shared customer `label` leaves the small system only.
    fn demote(&mut self, label: i64) {
        let i = self.position(label);
        self.shared.swap_remove(i);
        self.extra.push(-label);
    }
}

struct Coupled {
    ell: u64,
    class: [Roster; 2],
    yprime1: i64,
    next_label: i64,
}

impl Coupled {
    fn x(&self) -> LatticeState {
        LatticeState::new(self.class[0].shared.len() as i64, self.class[1].shared.len() as i64)
    }

    fn ytilde(&self) -> LatticeState {
        LatticeState::new(self.class[0].len() as i64, self.class[1].len() as i64)
    }

    fn yprime(&self) -> LatticeState {
        LatticeState::new(self.yprime1, self.class[1].len() as i64)
    }

    fn arrive(&mut self, c: usize) {
        self.class[c].shared.push(self.next_label);
        self.next_label += 1;
        if c == 0 {
            self.yprime1 += 1;
        }
    }

    fn mobility(&mut self, rng: &mut ChaCha8Rng) {
        let n = self.class[1].len();
        let idx = rng.random_range(0..n);
        self.class[1].remove_at(idx);
    }

    fn service(&mut self, u: f64, small_pick: &mut ChaCha8Rng) {
        let y1 = self.class[0].len();
        let total = y1 + self.class[1].len();
        let y2 = self.class[1].len() as u64;

        let yp = self.yprime1 as f64;
        let yprime_departs = self.yprime1 > 0 && y2 <= self.ell && u < yp / (yp + self.ell as f64);

        if total > 0 {
            let idx = ((u * total as f64) as usize).min(total - 1);
            let (c_tilde, pos) = if idx < y1 { (0, idx) } else { (1, idx - y1) };
            let label = self.class[c_tilde].get(pos);
            if label > 0 {
                // C = C̃
                if c_tilde == 0 {
                    self.class[0].remove_at(pos);
                } else {
                    self.class[1].demote(label);
                }
            } else {
                let small = self.class[0].shared.len() + self.class[1].shared.len();
                if small > 0 {
                    let j = small_pick.random_range(0..small);
                    let n1 = self.class[0].shared.len();
                    let (c, k) = if j < n1 { (0, j) } else { (1, j - n1) };
                    let l = self.class[c].shared[k];
                    self.class[c].demote(l);
                }
                if c_tilde == 0 {
                    self.class[0].remove_at(pos);
                }
            }
        }
        if yprime_departs {
            self.yprime1 -= 1;
        }
    }
}

fn dominated(a: &LatticeState, b: &LatticeState) -> bool {
    a.le(b)
}

/// Simulate the coupled triple `(X, Ỹ, Y')` from the empty state for
/// `cfg.horizon_events` events, checking `X <= Ỹ <= Y'` after each one.
pub fn simulate_coupled(
    c: &CouplingParams,
    cfg: &SimConfig,
    record: bool,
) -> Result<CouplingTrace, SimError> {
    cfg.validate()?;
    let p = c.base;
    let mut hold = stream(cfg.seed, STREAM_HOLD);
    let mut event = stream(cfg.seed, STREAM_EVENT);
    let mut service = stream(cfg.seed, STREAM_SERVICE);
    let mut small_pick = stream(cfg.seed, STREAM_SMALL_PICK);
    let mut mobility = stream(cfg.seed, STREAM_MOBILITY);

    let mut sys = Coupled {
        ell: c.ell,
        class: [Roster::default(), Roster::default()],
        yprime1: 0,
        next_label: 1,
    };
    let mut acc = BatchedTimeAverage::new(7, cfg.batch_count);
    let mut trace = record.then(Vec::new);
    let mut time = 0.0;
    let mut violations = 0;
    let mut first_violation = None;
    let lt = p.lambda_tot();

    for n in 0..cfg.horizon_events {
        let y2 = sys.class[1].len() as f64;
        let total = p.lambda1 + lt + p.mu + p.theta * y2;
        let dt = hold.sample::<f64, _>(Exp1) / total;
        if let Some(b) = cfg.batch_of(n) {
            let (x, yt, yp) = (sys.x(), sys.ytilde(), sys.yprime());
            let values = [
                x.x1 as f64,
                x.x2 as f64,
                if x == LatticeState::ORIGIN { 1.0 } else { 0.0 },
                yt.x1 as f64,
                yt.x2 as f64,
                yp.x1 as f64,
                yp.x2 as f64,
            ];
            acc.record(b, dt, &values);
        }
        time += dt;

        let v = event.random::<f64>() * total;
        let kind = if v < p.lambda1 {
            sys.arrive(0);
            EventKind::Arrival1
        } else if v < p.lambda1 + lt {
            sys.arrive(1);
            EventKind::Arrival2
        } else if v < p.lambda1 + lt + p.mu {
            let u = service.random::<f64>();
            sys.service(u, &mut small_pick);
            EventKind::Service
        } else {
            sys.mobility(&mut mobility);
            EventKind::Mobility
        };

        let (x, yt, yp) = (sys.x(), sys.ytilde(), sys.yprime());
        if !(dominated(&x, &yt) && dominated(&yt, &yp)) {
            violations += 1;
            first_violation.get_or_insert(n);
        }
        if let Some(t) = trace.as_mut() {
            t.push(CoupledEvent {
                time,
                kind,
                x,
                ytilde: yt,
                yprime: yp,
            });
        }
    }

    Ok(CouplingTrace {
        params: *c,
        seed: cfg.seed,
        events: cfg.horizon_events,
        time,
        dominance_ok: violations == 0,
        violations,
        first_violation,
        averages: (0..7).map(|i| acc.estimate(i)).collect(),
        trace,
    })
}
