//! Lattice CTMC engine.
//!
//! Models describe their jumps through [`RateModel`]; the engine materializes
//! them on a finite [`TruncationBox`], solves for the stationary law and
//! reports how much probability sits on the outer layer of the box so that
//! every result carries its own truncation diagnostic.
//!
//! Transitions that leave the box are dropped (the box boundary reflects).
//! This keeps the truncated generator conservative; the price is tracked by
//! [`TruncatedDistribution::boundary_mass`].

mod adapt;
mod gth;
mod power;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::models::{ModelError, Stability};
use crate::stats::NeumaierSum;

pub use adapt::{adapt_truncation, Functional, TruncationOptions};
pub use gth::stationary_direct;
pub use power::{stationary_power, stationary_power_with, PowerOptions};

/// A point of the two-dimensional lattice. `x1` counts class-1 users and `x2`
/// class-2 users; `x2` may be negative only for shifted processes whose box
/// carries a negative `offset2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LatticeState {
    pub x1: i64,
    pub x2: i64,
}

impl LatticeState {
    pub const ORIGIN: LatticeState = LatticeState { x1: 0, x2: 0 };

    pub fn new(x1: i64, x2: i64) -> Self {
        LatticeState { x1, x2 }
    }

    pub fn total(&self) -> i64 {
        self.x1 + self.x2
    }

    /// Componentwise `self <= other`.
    pub fn le(&self, other: &LatticeState) -> bool {
        self.x1 <= other.x1 && self.x2 <= other.x2
    }
}

impl fmt::Display for LatticeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x1, self.x2)
    }
}

/// Jump kernel of a continuous-time Markov chain.
///
/// `transitions` appends every `(target, rate)` pair with a positive rate
/// leaving `state`. Zero rates may be omitted or emitted; the engine drops
/// them. The optional hooks let the truncation driver refuse unstable models
/// and pick a sensible first box.
pub trait RateModel {
    type State: Copy + fmt::Debug;

    fn transitions(
        &self,
        state: &Self::State,
        out: &mut Vec<(Self::State, f64)>,
    ) -> Result<(), ModelError>;

    /// Short human-readable description, recorded with every solve.
    fn tag(&self) -> String;

    fn stability(&self) -> Option<Stability> {
        None
    }

    /// First box to try when the caller does not supply one.
    fn box_hint(&self, _tol: f64) -> Option<TruncationBox> {
        None
    }
}

/// Finite rectangle `[0, n1_max] x [offset2, offset2 + n2_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TruncationBox {
    pub n1_max: u32,
    pub n2_max: u32,
    pub offset2: i64,
}

impl TruncationBox {
    pub fn new(n1_max: u32, n2_max: u32) -> Self {
        TruncationBox {
            n1_max,
            n2_max,
            offset2: 0,
        }
    }

    pub fn with_offset(n1_max: u32, n2_max: u32, offset2: i64) -> Self {
        TruncationBox {
            n1_max,
            n2_max,
            offset2,
        }
    }

    pub fn len(&self) -> usize {
        (self.n1_max as usize + 1) * (self.n2_max as usize + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, s: &LatticeState) -> bool {
        s.x1 >= 0
            && s.x1 <= self.n1_max as i64
            && s.x2 >= self.offset2
            && s.x2 <= self.offset2 + self.n2_max as i64
    }

    /// Whether `s` lies on the outermost layer (`x1 = n1_max` or `x2` at the top).
    pub fn on_boundary(&self, s: &LatticeState) -> bool {
        (self.n1_max > 0 && s.x1 == self.n1_max as i64)
            || (self.n2_max > 0 && s.x2 == self.offset2 + self.n2_max as i64)
    }

    /// Canonical (x1-major) index used by [`TruncatedDistribution`].
    pub fn canonical_index(&self, s: &LatticeState) -> Option<usize> {
        if !self.contains(s) {
            return None;
        }
        let w2 = self.n2_max as usize + 1;
        Some(s.x1 as usize * w2 + (s.x2 - self.offset2) as usize)
    }

    pub fn canonical_state(&self, idx: usize) -> LatticeState {
        let w2 = self.n2_max as usize + 1;
        LatticeState::new((idx / w2) as i64, (idx % w2) as i64 + self.offset2)
    }

    /// All states in canonical order.
    pub fn states(&self) -> impl Iterator<Item = LatticeState> + '_ {
        (0..self.len()).map(move |i| self.canonical_state(i))
    }
}

impl fmt::Display for TruncationBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.offset2 == 0 {
            write!(f, "[0,{}]x[0,{}]", self.n1_max, self.n2_max)
        } else {
            write!(
                f,
                "[0,{}]x[{},{}]",
                self.n1_max,
                self.offset2,
                self.offset2 + self.n2_max as i64
            )
        }
    }
}

#[derive(Debug, Error)]
pub enum CtmcError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("chain is reducible on {bx}: state {state} {reason}")]
    Reducible {
        bx: TruncationBox,
        state: LatticeState,
        reason: &'static str,
    },
    #[error("power iteration did not converge after {iterations} iterations (last change {residual:e})")]
    PowerNotConverged { iterations: usize, residual: f64 },
    #[error("model `{tag}` is {stability:?}; no stationary law to truncate")]
    NotPositiveRecurrent { tag: String, stability: Stability },
    #[error("truncation did not converge below {cap} states (last box {last_box}, values {previous:?} -> {last:?}, boundary mass {boundary_mass:e})")]
    TruncationFailure {
        cap: usize,
        last_box: TruncationBox,
        previous: Vec<f64>,
        last: Vec<f64>,
        boundary_mass: f64,
    },
}

/// Ordering of box states inside a [`Generator`]. The inner axis is the short
/// one so that the bandwidth equals the short side plus one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StateOrder {
    X1Major,
    X2Major,
}

/// Sparse generator of the truncated chain.
///
/// Row `i` stores its off-diagonal rates sorted by column. The diagonal is the
/// negated sum of those rates accumulated left to right in stored order, so
/// `(rate_0 + rate_1 + ...) + diag` evaluated in that order is exactly zero.
#[derive(Debug, Clone)]
pub struct Generator {
    bx: TruncationBox,
    order: StateOrder,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    rates: Vec<f64>,
    diag: Vec<f64>,
    bandwidth: usize,
    tag: String,
}

impl Generator {
    pub fn truncation_box(&self) -> TruncationBox {
        self.bx
    }

    pub fn order(&self) -> StateOrder {
        self.order
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Largest `|i - j|` over stored off-diagonal entries.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    pub fn index(&self, s: &LatticeState) -> Option<usize> {
        if !self.bx.contains(s) {
            return None;
        }
        let i1 = s.x1 as usize;
        let i2 = (s.x2 - self.bx.offset2) as usize;
        Some(match self.order {
            StateOrder::X1Major => i1 * (self.bx.n2_max as usize + 1) + i2,
            StateOrder::X2Major => i2 * (self.bx.n1_max as usize + 1) + i1,
        })
    }

    pub fn state(&self, idx: usize) -> LatticeState {
        let (i1, i2) = match self.order {
            StateOrder::X1Major => {
                let w = self.bx.n2_max as usize + 1;
                (idx / w, idx % w)
            }
            StateOrder::X2Major => {
                let w = self.bx.n1_max as usize + 1;
                (idx % w, idx / w)
            }
        };
        LatticeState::new(i1 as i64, i2 as i64 + self.bx.offset2)
    }

    /// Off-diagonal entries of row `i` as `(column, rate)`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.rates[r].iter().copied())
    }

    pub fn diag(&self, i: usize) -> f64 {
        self.diag[i]
    }

    /// Entry `(i, j)` of the generator.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return self.diag[i];
        }
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, r)| r)
    }

    /// Row sum evaluated in the documented order; exactly zero by construction.
    pub fn row_sum(&self, i: usize) -> f64 {
        let mut acc = 0.0;
        for (_, r) in self.row(i) {
            acc += r;
        }
        acc + self.diag[i]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.diag.iter().fold(0.0_f64, |m, d| m.max(-d))
    }
}

/// Materialize `model` on `bx`.
///
/// Rates must be finite and nonnegative and a state may not jump to itself.
/// Targets outside the box are discarded; duplicate targets are merged.
pub fn build_generator<M>(model: &M, bx: TruncationBox) -> Result<Generator, CtmcError>
where
    M: RateModel<State = LatticeState> + ?Sized,
{
    let order = if bx.n2_max <= bx.n1_max {
        StateOrder::X1Major
    } else {
        StateOrder::X2Major
    };
    let mut gen = Generator {
        bx,
        order,
        row_ptr: Vec::with_capacity(bx.len() + 1),
        cols: Vec::with_capacity(4 * bx.len()),
        rates: Vec::with_capacity(4 * bx.len()),
        diag: Vec::with_capacity(bx.len()),
        bandwidth: 0,
        tag: model.tag(),
    };
    gen.row_ptr.push(0);

    let mut buf = Vec::with_capacity(8);
    let mut row: Vec<(usize, f64)> = Vec::with_capacity(8);
    for i in 0..bx.len() {
        let s = gen.state(i);
        buf.clear();
        model.transitions(&s, &mut buf)?;
        row.clear();
        for &(t, rate) in &buf {
            if !rate.is_finite() || rate < 0.0 {
                return Err(ModelError::InvalidRate {
                    state: s.to_string(),
                    target: t.to_string(),
                    rate,
                }
                .into());
            }
            if t == s {
                return Err(ModelError::SelfTransition {
                    state: s.to_string(),
                }
                .into());
            }
            if rate == 0.0 {
                continue;
            }
            if let Some(j) = gen.index(&t) {
                row.push((j, rate));
            }
        }
        row.sort_unstable_by_key(|&(j, _)| j);
        let mut exit = 0.0;
        let mut k = 0;
        while k < row.len() {
            let (j, mut rate) = row[k];
            k += 1;
            while k < row.len() && row[k].0 == j {
                rate += row[k].1;
                k += 1;
            }
            gen.bandwidth = gen.bandwidth.max(i.abs_diff(j));
            gen.cols.push(j);
            gen.rates.push(rate);
            exit += rate;
        }
        gen.diag.push(-exit);
        gen.row_ptr.push(gen.cols.len());
    }
    Ok(gen)
}

/// How a [`TruncatedDistribution`] was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveMethod {
    /// Cancellation-free state elimination (GTH).
    Direct,
    /// Power iteration on the uniformized chain.
    Power,
}

/// Stationary law of a truncated chain together with its truncation diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct TruncatedDistribution {
    bx: TruncationBox,
    #[serde(skip)]
    probs: Vec<f64>,
    boundary_mass: f64,
    face_mass: [f64; 2],
    solve_method: SolveMethod,
    tag: String,
}

impl TruncatedDistribution {
    /// Build from probabilities in canonical order, normalizing them.
    pub(crate) fn from_canonical(
        bx: TruncationBox,
        mut probs: Vec<f64>,
        solve_method: SolveMethod,
        tag: String,
    ) -> Self {
        let total: f64 = probs.iter().copied().collect::<NeumaierSum>().value();
        for p in &mut probs {
            *p /= total;
        }
        let mut boundary = NeumaierSum::default();
        let mut face = [NeumaierSum::default(), NeumaierSum::default()];
        for (i, &p) in probs.iter().enumerate() {
            let s = bx.canonical_state(i);
            if bx.on_boundary(&s) {
                boundary.add(p);
            }
            if bx.n1_max > 0 && s.x1 == bx.n1_max as i64 {
                face[0].add(p);
            }
            if bx.n2_max > 0 && s.x2 == bx.offset2 + bx.n2_max as i64 {
                face[1].add(p);
            }
        }
        TruncatedDistribution {
            bx,
            probs,
            boundary_mass: boundary.value(),
            face_mass: [face[0].value(), face[1].value()],
            solve_method,
            tag,
        }
    }

    pub fn truncation_box(&self) -> TruncationBox {
        self.bx
    }

    pub fn solve_method(&self) -> SolveMethod {
        self.solve_method
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// Mass on states with `x1 = n1_max` or `x2` at the top of the box.
    pub fn boundary_mass(&self) -> f64 {
        self.boundary_mass
    }

    /// Mass on the `x1 = n1_max` face and on the top `x2` face.
    pub fn face_mass(&self) -> [f64; 2] {
        self.face_mass
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn prob(&self, s: &LatticeState) -> f64 {
        self.bx.canonical_index(s).map_or(0.0, |i| self.probs[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (LatticeState, f64)> + '_ {
        self.probs
            .iter()
            .enumerate()
            .map(move |(i, &p)| (self.bx.canonical_state(i), p))
    }

    /// `sum_s f(s) pi(s)`, compensated.
    pub fn functional(&self, f: impl Fn(LatticeState) -> f64) -> f64 {
        self.iter().map(|(s, p)| f(s) * p).collect::<NeumaierSum>().value()
    }

    pub fn mean_x1(&self) -> f64 {
        self.functional(|s| s.x1 as f64)
    }

    pub fn mean_x2(&self) -> f64 {
        self.functional(|s| s.x2 as f64)
    }

    /// Probability of the origin `(0, 0)`.
    pub fn p_empty(&self) -> f64 {
        self.prob(&LatticeState::ORIGIN)
    }

    /// Law of `x1` on `[0, n1_max]`.
    pub fn marginal_x1(&self) -> Vec<f64> {
        let w2 = self.bx.n2_max as usize + 1;
        self.probs
            .chunks(w2)
            .map(|c| c.iter().copied().collect::<NeumaierSum>().value())
            .collect()
    }

    /// Law of `x2 - offset2` on `[0, n2_max]`.
    pub fn marginal_x2(&self) -> Vec<f64> {
        let w2 = self.bx.n2_max as usize + 1;
        let mut acc = vec![NeumaierSum::default(); w2];
        for c in self.probs.chunks(w2) {
            for (a, &p) in acc.iter_mut().zip(c) {
                a.add(p);
            }
        }
        acc.into_iter().map(|a| a.value()).collect()
    }

    /// Law of `x1 + x2` (with `x2` measured from the box offset).
    pub fn total_count_law(&self) -> Vec<f64> {
        let max = self.bx.n1_max as usize + self.bx.n2_max as usize;
        let mut acc = vec![NeumaierSum::default(); max + 1];
        for (i, &p) in self.probs.iter().enumerate() {
            let s = self.bx.canonical_state(i);
            acc[(s.x1 + s.x2 - self.bx.offset2) as usize].add(p);
        }
        acc.into_iter().map(|a| a.value()).collect()
    }

    /// Total-variation distance to another law on the same box.
    pub fn tv_distance(&self, other: &TruncatedDistribution) -> Option<f64> {
        if self.bx != other.bx {
            return None;
        }
        let l1: NeumaierSum = self
            .probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| (a - b).abs())
            .collect();
        Some(0.5 * l1.value())
    }
}

/// `sum_s f(s) pi(s)` over a solved table.
pub fn functional(dist: &TruncatedDistribution, f: impl Fn(LatticeState) -> f64) -> f64 {
    dist.functional(f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FreeParams, Mm1, ZModel};

    #[test]
    fn mm1_generator_is_tridiagonal() {
        let gen = build_generator(&Mm1::new(1.0, 2.0), TruncationBox::new(3, 0)).unwrap();
        assert_eq!(gen.len(), 4);
        assert_eq!(gen.bandwidth(), 1);
        for i in 0..4 {
            assert_eq!(gen.row_sum(i), 0.0);
            for (j, r) in gen.row(i) {
                assert_eq!(i.abs_diff(j), 1);
                assert!(r > 0.0);
            }
        }
        assert_eq!(gen.entry(0, 1), 1.0);
        assert_eq!(gen.entry(1, 0), 2.0);
        // arrivals at the top of the box are dropped
        assert_eq!(gen.diag(3), -2.0);
    }

    #[test]
    fn free_model_origin_has_two_arrivals_only() {
        let p = FreeParams::new(0.3, 0.2, 0.1, 1.0, 0.5).unwrap();
        let model = crate::models::free_rates(p);
        let gen = build_generator(&model, TruncationBox::new(4, 4)).unwrap();
        let o = gen.index(&LatticeState::ORIGIN).unwrap();
        let row: Vec<_> = gen.row(o).map(|(j, r)| (gen.state(j), r)).collect();
        assert_eq!(row.len(), 2);
        assert!(row.contains(&(LatticeState::new(1, 0), 0.3)));
        assert!(row.iter().any(|&(s, r)| s == LatticeState::new(0, 1) && (r - 0.3).abs() < 1e-15));
    }

    #[test]
    fn z_model_bottom_is_reflecting() {
        let p = FreeParams::new(0.5, 2.0, 0.0, 1.0, 1.0).unwrap();
        let z = ZModel::new(&p, 3).unwrap();
        let bx = TruncationBox::with_offset(0, 20, -3);
        let gen = build_generator(&z, bx).unwrap();
        let bottom = gen.index(&LatticeState::new(0, -3)).unwrap();
        let row: Vec<_> = gen.row(bottom).map(|(j, _)| gen.state(j)).collect();
        assert_eq!(row, vec![LatticeState::new(0, -2)]);
    }

    #[test]
    fn rows_sum_to_zero_exactly_on_free_model() {
        let p = FreeParams::new(0.37, 0.11, 0.29, 1.3, 0.7).unwrap();
        let gen = build_generator(&crate::models::free_rates(p), TruncationBox::new(30, 25)).unwrap();
        for i in 0..gen.len() {
            assert_eq!(gen.row_sum(i), 0.0, "row {i}");
        }
        assert_eq!(gen.bandwidth(), 26);
    }

    struct Broken;
    impl RateModel for Broken {
        type State = LatticeState;
        fn transitions(
            &self,
            s: &LatticeState,
            out: &mut Vec<(LatticeState, f64)>,
        ) -> Result<(), ModelError> {
            out.push((LatticeState::new(s.x1 + 1, s.x2), -1.0));
            Ok(())
        }
        fn tag(&self) -> String {
            "broken".into()
        }
    }

    #[test]
    fn negative_rate_is_a_model_error() {
        let err = build_generator(&Broken, TruncationBox::new(2, 2)).unwrap_err();
        assert!(matches!(err, CtmcError::Model(ModelError::InvalidRate { .. })));
    }

    #[test]
    fn canonical_index_round_trips() {
        let bx = TruncationBox::with_offset(3, 5, -2);
        for (i, s) in bx.states().enumerate() {
            assert_eq!(bx.canonical_index(&s), Some(i));
        }
        assert!(bx.on_boundary(&LatticeState::new(3, 0)));
        assert!(bx.on_boundary(&LatticeState::new(0, 3)));
        assert!(!bx.on_boundary(&LatticeState::new(2, 2)));
    }
}
