use hjb_core::estimates::{
    deteriorated_check, growth_envelope, lipschitz_quotient, sup_gradient, PairSampler,
};
use hjb_core::pde_solver::solve_with_truncation_escalation;
use hjb_core::problem::{ScalarShape, TimeProfile};
use hjb_core::{quadratic_problem, EscalationConfig, Grid, QuadraticSpec, SchemeConfig, ValueFunction};
use proptest::prelude::*;

fn field(vals: Vec<f64>) -> ValueFunction {
    let g = Grid::new(vec![0.0], 2.0, 11, 1, 1.0).unwrap();
    ValueFunction::from_values(g, vals).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn certificates_scale_with_the_field(
        vals in prop::collection::vec(-4.0..4.0f64, 22),
        lambda in 0.1..10.0f64,
    ) {
        let u = field(vals);
        let v = u.map(|x| lambda * x);
        let s = PairSampler::new(1000, 0, 0.6);
        let rel = |a: f64, b: f64| (a - b).abs() <= 1e-13 * (1.0 + b.abs());
        prop_assert!(rel(sup_gradient(&v, 0.6), lambda * sup_gradient(&u, 0.6)));
        prop_assert!(rel(lipschitz_quotient(&v, &s), lambda * lipschitz_quotient(&u, &s)));
        prop_assert!(rel(growth_envelope(&v), lambda * growth_envelope(&u)));
    }

    #[test]
    fn deteriorated_constant_is_nonincreasing(
        vals in prop::collection::vec(-4.0..4.0f64, 22),
        k1 in 0.0..5.0f64,
        dk in 0.0..5.0f64,
    ) {
        let u = field(vals);
        let s = PairSampler::new(1000, 0, 0.6);
        prop_assert!(deteriorated_check(&u, k1 + dk, &s) <= deteriorated_check(&u, k1, &s));
    }

    #[test]
    fn stencil_and_secant_agree_on_smooth_fields(a in 0.2..3.0f64, b in -2.0..2.0f64) {
        let g = Grid::new(vec![0.0], 2.0, 129, 1, 1.0).unwrap();
        let h = g.h();
        let u = ValueFunction::from_fn(g, |_, x| (a * x[0]).sin() + b * x[0]);
        let s = PairSampler::new(1000, 0, 0.6);
        let sup = sup_gradient(&u, 0.6);
        prop_assert!(sup <= lipschitz_quotient(&u, &s) + (a * a + 1.0) * h);
    }
}

#[test]
fn gradient_bound_depends_on_source_only_through_its_integral() {
    let sup = |profile| {
        let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0);
        s.b2.matrix = Some(vec![vec![0.5]]);
        s.b2.clamp = Some(1.0);
        s.f2.slope = Some(vec![0.5]);
        s.f2.shape = ScalarShape::Abs;
        s.f2.clamp = Some(1.0);
        s.f2.profile = profile;
        s.g.clamp = Some(3.0);
        let p = quadratic_problem(&s).unwrap();
        let g = Grid::new(vec![0.0], 4.0, 65, 64, 1.0).unwrap();
        let esc = EscalationConfig::new(0.25, 3e-6);
        let (u, _, _) = solve_with_truncation_escalation(&p, &g, &esc, &SchemeConfig::default()).unwrap();
        sup_gradient(&u, 0.6)
    };
    let flat = sup(TimeProfile::Constant);
    for profile in [TimeProfile::Ramp, TimeProfile::Front] {
        let other = sup(profile);
        assert!((other - flat).abs() <= 0.1 * flat, "{profile:?}: {other} vs {flat}");
    }
}
