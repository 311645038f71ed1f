use hjb_core::problem::{validate_assumptions, AuditConfig, BoundKind, LipschitzProfile, ScalarShape};
use hjb_core::{quadratic_problem, QuadraticSpec, RegularityConstants};
use proptest::prelude::*;

fn loosen(k: &RegularityConstants, up: f64) -> RegularityConstants {
    let l_f2 = k.l_f2.clone();
    RegularityConstants {
        l_b: k.l_b * up,
        l_f1: k.l_f1 * up,
        c_f1: k.c_f1 / up,
        c_f1_prime: k.c_f1_prime * up,
        big_c_f1: k.big_c_f1 * up,
        big_c_f1_prime: k.big_c_f1_prime * up,
        l_f2: LipschitzProfile::new(move |t| up * l_f2.at(t), up * k.l_f2.integral()),
        l_sigma: k.l_sigma * up,
        l_g: k.l_g * up,
        eta_sigma: k.eta_sigma / up,
        l_a: k.l_a * up,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn loosening_constants_never_flips_a_pass(
        drift in -1.0..1.0f64,
        source in -1.0..1.0f64,
        sigma in 0.3..2.0f64,
        under in 0.2..1.0f64,
        up in 1.0..3.0f64,
        seed in any::<u64>(),
    ) {
        let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0);
        s.b2.matrix = Some(vec![vec![drift]]);
        s.f2.slope = Some(vec![source]);
        s.f2.shape = ScalarShape::Abs;
        s.sigma.scale = sigma;
        // understate L_b so some verdicts start out failing
        s.constants.l_b = Some(under * drift.abs().max(sigma));
        let p = quadratic_problem(&s).unwrap();
        let cfg = AuditConfig::new(300, 3.0, seed);
        let before = validate_assumptions(&p, &cfg).unwrap();
        let looser = p.with_constants(loosen(p.constants(), up)).unwrap();
        let after = validate_assumptions(&looser, &cfg).unwrap();
        for (b, a) in before.records.iter().zip(&after.records) {
            prop_assert_eq!(b.name, a.name);
            if b.kind != BoundKind::Match && b.pass {
                prop_assert!(a.pass, "{} flipped: {:?} -> {:?}", b.name, b, a);
            }
        }
    }
}
