use hjb_core::mc_verify::{pairwise_sum, simulate_cost, Policy, SimulationConfig};
use hjb_core::{quadratic_problem, QuadraticSpec};
use proptest::prelude::*;

fn run(seed: u64, threads: usize, antithetic: bool) -> (u64, u64) {
    let p = quadratic_problem(&QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0)).unwrap();
    let sim = SimulationConfig { n_paths: 2000, dt_sim: 1.0 / 32.0, seed, antithetic };
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
    let e = pool.install(|| simulate_cost(&p, Policy::Constant(&[-0.5]), 0.0, &[0.2], &sim).unwrap());
    (e.mean.to_bits(), e.stderr.to_bits())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn estimates_do_not_depend_on_the_pool(seed in any::<u64>(), antithetic in any::<bool>()) {
        let one = run(seed, 1, antithetic);
        prop_assert_eq!(one, run(seed, 3, antithetic));
        prop_assert_eq!(one, run(seed, 1, antithetic));
    }

    #[test]
    fn pairwise_sum_matches_naive_sum(v in prop::collection::vec(-1e3..1e3f64, 0..300)) {
        let naive: f64 = v.iter().sum();
        let abs: f64 = v.iter().map(|x| x.abs()).sum();
        prop_assert!((pairwise_sum(&v) - naive).abs() <= 1e-12 * (1.0 + abs));
    }
}
