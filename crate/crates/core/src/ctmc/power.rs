//! Power iteration on the uniformized chain. Slow, but it shares nothing with
//! the elimination path beyond the generator itself, which makes it a useful
//! cross-check.

use super::{CtmcError, Generator, SolveMethod, TruncatedDistribution};
use crate::stats::NeumaierSum;

#[derive(Debug, Clone, Copy)]
pub struct PowerOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl PowerOptions {
    pub fn new(tol: f64) -> Self {
        PowerOptions {
            tol,
            max_iter: 2_000_000,
        }
    }
}

/// Iterate `x <- x (I + Q / L)` with `L` slightly above the largest exit rate.
///
/// Stops when the geometric tail estimate `d_k r / (1 - r)` of the remaining
/// L1 change drops below `tol`, where `d_k` is the last change and `r` the
/// observed contraction rate.
pub fn stationary_power(gen: &Generator, tol: f64) -> Result<TruncatedDistribution, CtmcError> {
    stationary_power_with(gen, PowerOptions::new(tol))
}

pub fn stationary_power_with(
    gen: &Generator,
    opts: PowerOptions,
) -> Result<TruncatedDistribution, CtmcError> {
    assert!(opts.tol > 0.0, "power iteration needs a positive tolerance");
    let n = gen.len();
    let unif = 1.02 * gen.max_exit_rate();
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];

    const LAG: usize = 16;
    let mut history = [f64::INFINITY; LAG];
    let mut converged = unif == 0.0;
    let mut last = f64::INFINITY;
    let mut it = 0;
    while !converged {
        if it >= opts.max_iter {
            return Err(CtmcError::PowerNotConverged {
                iterations: it,
                residual: last,
            });
        }
        for i in 0..n {
            y[i] = x[i] * (1.0 + gen.diag(i) / unif);
        }
        for i in 0..n {
            let xi = x[i] / unif;
            if xi == 0.0 {
                continue;
            }
            for (j, r) in gen.row(i) {
                y[j] += xi * r;
            }
        }
        let total: f64 = y.iter().copied().collect::<NeumaierSum>().value();
        let mut diff = NeumaierSum::default();
        for i in 0..n {
            y[i] /= total;
            diff.add((y[i] - x[i]).abs());
        }
        std::mem::swap(&mut x, &mut y);
        last = diff.value();

        let older = history[it % LAG];
        history[it % LAG] = last;
        it += 1;
        if last == 0.0 {
            break;
        }
        if it > LAG && older.is_finite() && older > 0.0 {
            let rate = (last / older).powf(1.0 / LAG as f64);
            if rate < 1.0 && last * rate / (1.0 - rate) < opts.tol {
                converged = true;
            }
        }
    }

    let bx = gen.truncation_box();
    let mut canonical = vec![0.0; n];
    for (i, p) in x.into_iter().enumerate() {
        canonical[bx.canonical_index(&gen.state(i)).unwrap()] = p;
    }
    Ok(TruncatedDistribution::from_canonical(
        bx,
        canonical,
        SolveMethod::Power,
        gen.tag().to_string(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ctmc::{build_generator, stationary_direct, TruncationBox};
    use crate::models::Mm1;

    #[test]
    fn agrees_with_direct_on_mm1() {
        let gen = build_generator(&Mm1::new(1.0, 2.0), TruncationBox::new(40, 0)).unwrap();
        let direct = stationary_direct(&gen).unwrap();
        let power = stationary_power(&gen, 1e-12).unwrap();
        assert_eq!(power.solve_method(), SolveMethod::Power);
        for (s, p) in direct.iter() {
            assert!((p - power.prob(&s)).abs() < 1e-9);
        }
    }

    #[test]
    fn reports_non_convergence() {
        let gen = build_generator(&Mm1::new(1.0, 1.1), TruncationBox::new(200, 0)).unwrap();
        let err = stationary_power_with(
            &gen,
            PowerOptions {
                tol: 1e-14,
                max_iter: 50,
            },
        )
        .unwrap_err();
        assert!(matches!(err, CtmcError::PowerNotConverged { iterations: 50, .. }));
    }
}
