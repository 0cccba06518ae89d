use proptest::prelude::*;

use mobps_core::ctmc::{build_generator, stationary_direct, stationary_power, Generator};
use mobps_core::models::{free_rates, yprime_rates, ytilde_rates};
use mobps_core::report::format_float;
use mobps_core::simulate::simulate_coupled;
use mobps_core::{CouplingParams, FreeParams, SimConfig, TruncatedDistribution, TruncationBox};

fn params() -> impl Strategy<Value = FreeParams> {
    (0.05..0.8f64, 0.05..3.0f64, 0.0..1.0f64, 0.5..2.0f64, 0.2..2.0f64).prop_map(|(r1, l2, ln, mu, theta)| {
        FreeParams::new(r1 * mu, l2, ln, mu, theta).unwrap()
    })
}

/// Largest entry of `|pi Q|`. The generator and the distribution index
/// states differently, so map through the state.
fn balance_residual(gen: &Generator, d: &TruncatedDistribution) -> f64 {
    let pi: Vec<f64> = (0..gen.len()).map(|i| d.prob(&gen.state(i))).collect();
    let mut flow = vec![0.0; pi.len()];
    for i in 0..pi.len() {
        flow[i] += pi[i] * gen.diag(i);
        for (j, r) in gen.row(i) {
            flow[j] += pi[i] * r;
        }
    }
    flow.iter().fold(0.0, |m, f| m.max(f.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn generators_conserve_probability(p in params(), n1 in 1u32..30, n2 in 1u32..30) {
        let gen = build_generator(&free_rates(p), TruncationBox::new(n1, n2)).unwrap();
        for i in 0..gen.len() {
            prop_assert_eq!(gen.row_sum(i), 0.0);
            prop_assert!(gen.row(i).all(|(_, r)| r >= 0.0));
        }
    }

    #[test]
    fn direct_solve_is_stationary(p in params(), n1 in 1u32..25, n2 in 1u32..25) {
        let gen = build_generator(&free_rates(p), TruncationBox::new(n1, n2)).unwrap();
        let d = stationary_direct(&gen).unwrap();
        let total: f64 = d.probabilities().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(d.probabilities().iter().all(|&x| x >= 0.0));
        prop_assert!(balance_residual(&gen, &d) < 1e-12 * gen.max_exit_rate());
    }

    #[test]
    fn direct_and_power_agree(p in params(), n1 in 1u32..12, n2 in 1u32..12) {
        let gen = build_generator(&free_rates(p), TruncationBox::new(n1, n2)).unwrap();
        let a = stationary_direct(&gen).unwrap();
        let b = stationary_power(&gen, 1e-12).unwrap();
        prop_assert!(a.tv_distance(&b).unwrap() < 1e-8);
    }

    /// Stationary means respect the dominance the coupling enforces pathwise.
    #[test]
    fn bounding_models_dominate_in_mean(p in params()) {
        let c = CouplingParams::new(p, 0.1).unwrap();
        let bx = TruncationBox::new(40, 30);
        let free = stationary_direct(&build_generator(&free_rates(p), bx).unwrap()).unwrap();
        let tilde = stationary_direct(&build_generator(&ytilde_rates(p), bx).unwrap()).unwrap();
        let prime = stationary_direct(&build_generator(&yprime_rates(c), bx).unwrap()).unwrap();
        let slack = 1e-9 + free.boundary_mass().max(tilde.boundary_mass()).max(prime.boundary_mass()) * 100.0;
        prop_assert!(free.mean_x1() <= tilde.mean_x1() + slack);
        prop_assert!(free.mean_x2() <= tilde.mean_x2() + slack);
        prop_assert!(tilde.mean_x1() <= prime.mean_x1() + slack);
    }

    #[test]
    fn coupled_paths_never_cross(p in params(), eps in 0.01..1.0f64, seed in any::<u64>()) {
        let c = CouplingParams::new(p, eps).unwrap();
        let t = simulate_coupled(&c, &SimConfig::new(seed, 5_000), false).unwrap();
        prop_assert!(t.dominance_ok);
        prop_assert_eq!(t.violations, 0);
    }

    #[test]
    fn floats_round_trip_through_text(x in any::<f64>().prop_filter("finite", |x| x.is_finite())) {
        let back: f64 = format_float(x).parse().unwrap();
        prop_assert_eq!(back.to_bits(), x.to_bits());
    }
}
