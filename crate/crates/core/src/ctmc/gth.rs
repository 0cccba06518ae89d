//! Grassmann–Taksar–Heyman elimination on a banded ordering.
//!
//! States are eliminated from the last index down to index 1. Eliminating `m`
//! folds its outgoing rates into the states that can reach it; the exit rate
//! used as pivot is recomputed as the sum of the remaining off-diagonal rates
//! of row `m`, so no subtraction ever happens and small probabilities keep
//! full relative accuracy.
//!
//! With bandwidth `b`, eliminating `m` only touches states in `[m - b, m]`.
//! States are processed in blocks `K` of `k` consecutive indices. Updates
//! involving a row or column of `K` are applied one state at a time; the
//! updates among the `b` states `R` just below `K` are deferred and applied
//! as one rank-`k` product, which is where almost all the work lies. Deferral
//! only reorders sums of nonnegative terms.
//!
//! The live states `R ∪ K` sit in a dense `(b + k)^2` window addressed
//! circularly by `state % (b + k)`; a state entering the window brings its
//! original rates, which no elimination has touched yet. Only the reduced
//! columns needed for back-substitution are kept, `b` values per state.

use super::{CtmcError, Generator, SolveMethod, TruncatedDistribution};
use crate::stats::NeumaierSum;

const BLOCK: usize = 64;

/// Stationary law of the truncated chain by cancellation-free elimination.
///
/// Fails with [`CtmcError::Reducible`] when some state of the box cannot
/// reach, or cannot be reached from, the rest of the box.
pub fn stationary_direct(gen: &Generator) -> Result<TruncatedDistribution, CtmcError> {
    solve_blocked(gen, BLOCK)
}

fn solve_blocked(gen: &Generator, block: usize) -> Result<TruncatedDistribution, CtmcError> {
    let n_states = gen.len();
    let bx = gen.truncation_box();
    let pi = if n_states == 1 {
        vec![1.0]
    } else {
        eliminate(gen, block)?
    };

    let mut canonical = vec![0.0; n_states];
    for (i, p) in pi.into_iter().enumerate() {
        let idx = bx
            .canonical_index(&gen.state(i))
            .expect("generator state outside its box");
        canonical[idx] = p;
    }
    Ok(TruncatedDistribution::from_canonical(
        bx,
        canonical,
        SolveMethod::Direct,
        gen.tag().to_string(),
    ))
}

/// Circular window over consecutive states.
struct Window {
    w: usize,
    data: Vec<f64>,
}

impl Window {
    fn slot(&self, s: usize) -> usize {
        s % self.w
    }

    /// Slot runs covering states `[lo, lo + len)`: `(first slot, offset from lo, length)`.
    fn runs(&self, lo: usize, len: usize) -> [(usize, usize, usize); 2] {
        let start = self.slot(lo);
        let first = len.min(self.w - start);
        [(start, 0, first), (0, first, len - first)]
    }

    fn at(&mut self, i: usize, j: usize) -> &mut f64 {
        let (si, sj) = (self.slot(i), self.slot(j));
        &mut self.data[si * self.w + sj]
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.slot(i) * self.w + self.slot(j)]
    }

    /// Bring state `s` in with its original rates to and from the live
    /// states `(s, top]`. States must enter in decreasing order.
    fn load(&mut self, gen: &Generator, s: usize, top: usize, b: usize) {
        let w = self.w;
        let rs = self.slot(s);
        self.data[rs * w..rs * w + w].fill(0.0);
        for r in 0..w {
            self.data[r * w + rs] = 0.0;
        }
        for (j, r) in gen.row(s) {
            if j > s && j <= top {
                *self.at(s, j) = r;
            }
        }
        for t in s + 1..=top.min(s + b) {
            for (j, r) in gen.row(t) {
                if j == s {
                    *self.at(t, s) = r;
                }
            }
        }
    }
}

fn eliminate(gen: &Generator, block: usize) -> Result<Vec<f64>, CtmcError> {
    let n_states = gen.len();
    let b = gen.bandwidth().max(1);
    let k = block.max(1);
    let mut win = Window {
        w: b + k,
        data: vec![0.0; (b + k) * (b + k)],
    };
    let w = win.w;
    // reduced column of state m: cols[m * b + (m - 1 - i)] = q(i, m), i in [m - b, m)
    let mut cols = vec![0.0_f64; n_states * b];
    let mut exit = vec![0.0_f64; n_states];
    let mut pivot = vec![0.0_f64; b];
    let mut lhs = vec![0.0_f64; b * k];
    let mut rhs = vec![0.0_f64; k * b];

    let mut top = n_states - 1;
    // window holds [loaded, top]
    let mut loaded = n_states;
    while top >= 1 {
        let kk = k.min(top);
        let base = top - kk;
        let lo_r = (base + 1).saturating_sub(b);
        while loaded > lo_r {
            loaded -= 1;
            win.load(gen, loaded, top, b);
        }

        for m in (base + 1..=top).rev() {
            let lo = m.saturating_sub(b);
            let len = m - lo;
            let rm = win.slot(m);
            let row_runs = win.runs(lo, len);
            for &(sl, off, l) in &row_runs {
                pivot[off..off + l].copy_from_slice(&win.data[rm * w + sl..rm * w + sl + l]);
            }
            let s: f64 = pivot[..len].iter().copied().collect::<NeumaierSum>().value();
            if !(s > 0.0) {
                return Err(CtmcError::Reducible {
                    bx: gen.truncation_box(),
                    state: gen.state(m),
                    reason: "cannot reach the lower-indexed states",
                });
            }
            exit[m] = s;
            let inv = 1.0 / s;

            // rows of R only receive the columns of K now; see module docs
            let k_lo = (base + 1).max(lo);
            let k_runs = win.runs(k_lo, m - k_lo);
            let col = &mut cols[m * b..m * b + b];
            for i in lo..m {
                let a = win.get(i, m);
                col[m - 1 - i] = a;
                if a == 0.0 {
                    continue;
                }
                let f = a * inv;
                let ri = win.slot(i) * w;
                let (runs, shift) = if i > base {
                    (&row_runs, 0)
                } else {
                    (&k_runs, k_lo - lo)
                };
                for &(sl, off, l) in runs.iter() {
                    let dst = &mut win.data[ri + sl..ri + sl + l];
                    for (x, &p) in dst.iter_mut().zip(&pivot[shift + off..shift + off + l]) {
                        *x += f * p;
                    }
                }
            }
        }

        // deferred R x R update: C += (q(R, K) / s_K) q(K, R)
        let nr = base + 1 - lo_r;
        for (t, m) in (base + 1..=top).enumerate() {
            let inv = 1.0 / exit[m];
            for (r, i) in (lo_r..=base).enumerate() {
                lhs[r * kk + t] = win.get(i, m) * inv;
                rhs[t * nr + r] = win.get(m, i);
            }
        }
        let runs = win.runs(lo_r, nr);
        for &(rs, ro, rl) in &runs {
            for &(cs, co, cl) in &runs {
                if rl == 0 || cl == 0 {
                    continue;
                }
                // SAFETY: the lhs block is rl x kk at row offset ro (row stride kk),
                // the rhs block kk x cl at column offset co (row stride nr), and the
                // destination rl x cl block starts at (rs, cs) of a w x w row-major
                // array with rs + rl <= w and cs + cl <= w; all three are disjoint.
                unsafe {
                    matrixmultiply::dgemm(
                        rl,
                        kk,
                        cl,
                        1.0,
                        lhs.as_ptr().add(ro * kk),
                        kk as isize,
                        1,
                        rhs.as_ptr().add(co),
                        nr as isize,
                        1,
                        1.0,
                        win.data.as_mut_ptr().add(rs * w + cs),
                        w as isize,
                        1,
                    );
                }
            }
        }
        top = base;
    }

    let mut pi = vec![0.0_f64; n_states];
    pi[0] = 1.0;
    for n in 1..n_states {
        let lo = n.saturating_sub(b);
        let col = &cols[n * b..n * b + b];
        let acc: NeumaierSum = (lo..n).map(|i| pi[i] * col[n - 1 - i]).collect();
        let p = acc.value() / exit[n];
        if !(p > 0.0) {
            return Err(CtmcError::Reducible {
                bx: gen.truncation_box(),
                state: gen.state(n),
                reason: "is not reachable from the lower-indexed states",
            });
        }
        pi[n] = p;
    }
    Ok(pi)
}
