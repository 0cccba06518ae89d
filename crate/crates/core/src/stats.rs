//! Small numerical and statistical helpers shared by the solvers and the simulator.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct NeumaierSum {
    sum: f64,
    comp: f64,
}

impl NeumaierSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for NeumaierSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = NeumaierSum::default();
        for x in iter {
            s.add(x);
        }
        s
    }
}

/// Point estimate with a 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
    /// Standard error of `mean`.
    pub std_error: f64,
    pub samples: usize,
}

impl Estimate {
    /// Whether `value` lies within `k` half-widths of the estimate.
    pub fn covers(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.half_width
    }
}

/// Two-sided 95% Student-t quantile for `dof` degrees of freedom.
pub fn t_quantile_95(dof: usize) -> f64 {
    if dof == 0 {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof as f64)
        .map(|t| t.inverse_cdf(0.975))
        .unwrap_or(1.96)
}

/// Mean, standard error and 95% half-width of i.i.d. samples.
pub fn iid_estimate(samples: &[f64]) -> Estimate {
    let n = samples.len();
    let mean = samples.iter().copied().collect::<NeumaierSum>().value() / n as f64;
    let var = if n > 1 {
        samples
            .iter()
            .map(|x| (x - mean) * (x - mean))
            .collect::<NeumaierSum>()
            .value()
            / (n - 1) as f64
    } else {
        f64::INFINITY
    };
    let se = (var / n as f64).sqrt();
    Estimate {
        mean,
        half_width: t_quantile_95(n.saturating_sub(1)) * se,
        std_error: se,
        samples: n,
    }
}

/// Ratio estimator `sum(num) / sum(den)` over batches, with the spread of
/// the per-batch ratios as its standard error.
pub fn batch_ratio_estimate(batches: &[(f64, f64)]) -> Estimate {
    let num: f64 = batches.iter().map(|b| b.0).collect::<NeumaierSum>().value();
    let den: f64 = batches.iter().map(|b| b.1).collect::<NeumaierSum>().value();
    let ratios: Vec<f64> = batches
        .iter()
        .filter(|b| b.1 > 0.0)
        .map(|b| b.0 / b.1)
        .collect();
    let spread = iid_estimate(&ratios);
    Estimate {
        mean: num / den,
        ..spread
    }
}

/// Time averages of several observables of a piecewise-constant path,
/// collected in consecutive batches for batch-means intervals.
#[derive(Debug, Clone)]
pub struct BatchedTimeAverage {
    integrals: Vec<Vec<f64>>,
    durations: Vec<f64>,
}

impl BatchedTimeAverage {
    pub fn new(observables: usize, batches: usize) -> Self {
        BatchedTimeAverage {
            integrals: vec![vec![0.0; batches]; observables],
            durations: vec![0.0; batches],
        }
    }

    /// Record `dt` time units spent with observable values `values` in `batch`.
    pub fn record(&mut self, batch: usize, dt: f64, values: &[f64]) {
        self.durations[batch] += dt;
        for (acc, v) in self.integrals.iter_mut().zip(values) {
            acc[batch] += v * dt;
        }
    }

    pub fn estimate(&self, observable: usize) -> Estimate {
        let pairs: Vec<(f64, f64)> = self.integrals[observable]
            .iter()
            .copied()
            .zip(self.durations.iter().copied())
            .collect();
        batch_ratio_estimate(&pairs)
    }

    pub fn total_time(&self) -> f64 {
        self.durations.iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let s: NeumaierSum = [1.0, 1e100, 1.0, -1e100].into_iter().collect();
        assert_eq!(s.value(), 2.0);
    }

    #[test]
    fn t_quantile_matches_tables() {
        assert!((t_quantile_95(31) - 2.0395).abs() < 1e-3);
        assert!((t_quantile_95(1_000_000) - 1.96).abs() < 1e-3);
    }

    #[test]
    fn iid_estimate_of_constant() {
        let e = iid_estimate(&[2.0; 10]);
        assert_eq!(e.mean, 2.0);
        assert_eq!(e.half_width, 0.0);
    }
}
