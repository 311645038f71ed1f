use hjb_core::cole_hopf::{invert, solve_linear, to_linear, transform};
use hjb_core::{quadratic_problem, Grid, QuadraticSpec, SchemeConfig, ValueFunction};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transform_round_trip(vals in prop::collection::vec(-30.0..30.0f64, 18)) {
        let g = Grid::new(vec![0.0], 1.0, 9, 1, 1.0).unwrap();
        let u = ValueFunction::from_values(g, vals).unwrap();
        let back = invert(&transform(&u)).unwrap();
        for (a, b) in u.values().iter().zip(back.values()) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * (1.0 + a.abs()), "{a} {b}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn linear_solution_stays_positive(
        slope in -1.0..1.0f64,
        source in 0.0..1.0f64,
        drift in -0.5..0.5f64,
    ) {
        let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![slope], 0.0);
        s.f2.offset = source;
        s.b2.offset = Some(vec![drift]);
        let lp = to_linear(&quadratic_problem(&s).unwrap()).unwrap();
        let g = Grid::new(vec![0.0], 2.0, 33, 32, 1.0).unwrap();
        let v = solve_linear(&lp, &g, &SchemeConfig::default()).unwrap();
        prop_assert!(v.values().iter().all(|x| *x > 0.0 && x.is_finite()));
    }

    #[test]
    fn constant_data_obey_the_discrete_maximum_principle(
        source in 0.0..1.0f64,
        drift in -0.5..0.5f64,
    ) {
        let mut s = QuadraticSpec::new(1, 1.0);
        s.f2.offset = source;
        s.b2.offset = Some(vec![drift]);
        let lp = to_linear(&quadratic_problem(&s).unwrap()).unwrap();
        let g = Grid::new(vec![0.0], 2.0, 33, 32, 1.0).unwrap();
        let v = solve_linear(&lp, &g, &SchemeConfig::default()).unwrap();
        for l in 0..g.n_layers() {
            let floor = (-source * (1.0 - g.time(l))).exp();
            for x in v.layer(l) {
                prop_assert!(*x >= floor * (1.0 - 1e-12) && *x <= 1.0 + 1e-12, "layer {l}: {x}");
            }
        }
    }
}

#[test]
fn discrepancy_shrinks_under_refinement() {
    use hjb_core::cole_hopf::cross_check;
    use hjb_core::EscalationConfig;
    let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0);
    s.f2.slope = Some(vec![0.5]);
    s.f2.clamp = Some(1.0);
    let p = quadratic_problem(&s).unwrap();
    let esc = EscalationConfig::new(0.25, 1e-6 * 4.0);
    let cfg = SchemeConfig::default();
    let d = |n_x, n_t| {
        let g = Grid::new(vec![0.0], 4.0, n_x, n_t, 1.0).unwrap();
        cross_check(&p, &g, &esc, &cfg).unwrap().sup_discrepancy
    };
    let (coarse, fine) = (d(33, 32), d(65, 64));
    assert!(fine < coarse, "{coarse} -> {fine}");
}
