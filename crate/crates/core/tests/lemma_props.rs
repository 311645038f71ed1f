use hjb_core::matrix_lemmas::{
    doubling_matrix_bound, doubling_matrix_bound_directional, generate_hypothesis_instances,
    generate_trace_instances, random_orthogonal, trace_product_bound, SymmetricMatrix,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-10 * scale
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn trace_bound_holds_and_is_conjugation_invariant(d in 1usize..=8, seed in any::<u64>()) {
        let inst = &generate_trace_instances(d, 1, seed)[0];
        let q = random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let c = trace_product_bound(&inst.a, &inst.b, inst.m, inst.big_m).unwrap();
        prop_assert!(c.holds);
        let r = trace_product_bound(&inst.a.conjugate(&q), &inst.b.conjugate(&q), inst.m, inst.big_m).unwrap();
        let scale = 1.0 + c.lhs.abs() + c.rhs.abs();
        prop_assert!(close(c.lhs, r.lhs, scale) && close(c.rhs, r.rhs, scale));
    }

    #[test]
    fn doubling_forms_are_conjugation_invariant(d in 1usize..=6, seed in any::<u64>()) {
        let inst = &generate_hypothesis_instances(d, 1, seed)[0];
        let q = random_orthogonal(d, &mut ChaCha8Rng::seed_from_u64(seed ^ 2));
        let (a, x, y) = (inst.a.conjugate(&q), inst.x.conjugate(&q), inst.y.conjugate(&q));
        for f in [doubling_matrix_bound, doubling_matrix_bound_directional] {
            let c = f(&inst.a, &inst.x, &inst.y, inst.c, inst.m).unwrap();
            let r = f(&a, &x, &y, inst.c, inst.m).unwrap();
            let scale = 1.0 + c.lhs.abs() + c.rhs.abs();
            prop_assert!(close(c.lhs, r.lhs, scale) && close(c.rhs, r.rhs, scale));
        }
        prop_assert!(doubling_matrix_bound_directional(&inst.a, &inst.x, &inst.y, inst.c, inst.m).unwrap().holds);
    }

    #[test]
    fn trace_bound_is_homogeneous(d in 1usize..=6, seed in any::<u64>(), s in 0.1..10.0f64) {
        let inst = &generate_trace_instances(d, 1, seed)[0];
        let c = trace_product_bound(&inst.a, &inst.b, inst.m, inst.big_m).unwrap();
        let r = trace_product_bound(&inst.a.scaled(s), &inst.b, s * inst.m, inst.big_m).unwrap();
        let scale = s * (1.0 + c.lhs.abs() + c.rhs.abs());
        prop_assert!(close(s * c.lhs, r.lhs, scale) && close(s * c.rhs, r.rhs, scale));
    }

    #[test]
    fn equality_when_a_is_a_multiple_of_identity(d in 1usize..=8, seed in any::<u64>(), m in 0.0..3.0f64) {
        let inst = &generate_trace_instances(d, 1, seed)[0];
        // B − M Id ≤ 0
        let b = inst.b.sub(&SymmetricMatrix::identity(d).scaled(inst.big_m));
        let c = trace_product_bound(&SymmetricMatrix::identity(d).scaled(m), &b, m, 0.0).unwrap();
        prop_assert!(close(c.lhs, c.rhs, 1.0 + c.lhs.abs()));
    }
}
