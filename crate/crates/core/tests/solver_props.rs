use hjb_core::pde_solver::{
    hamiltonian_min, solve, solve_with_truncation_escalation, step_backward, BoundaryClosure,
};
use hjb_core::problem::{ScalarShape, SigmaMode};
use hjb_core::{quadratic_problem, EscalationConfig, Grid, HJBProblem, QuadraticSpec, SchemeConfig};
use proptest::prelude::*;

fn family(drift: f64, source: f64, sigma: f64) -> HJBProblem {
    let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0);
    s.b2.matrix = Some(vec![vec![drift]]);
    s.b2.clamp = Some(1.0);
    s.f2.slope = Some(vec![source]);
    s.f2.shape = ScalarShape::Abs;
    s.f2.clamp = Some(1.0);
    s.sigma.scale = sigma;
    s.g.clamp = Some(3.0);
    quadratic_problem(&s).unwrap()
}

fn small_grid() -> Grid {
    Grid::new(vec![0.0], 3.0, 33, 16, 1.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn terminal_shift_shifts_solution(
        drift in -1.0..1.0f64,
        source in -1.0..1.0f64,
        sigma in 0.5..1.5f64,
        k in -3.0..3.0f64,
    ) {
        let p = family(drift, source, sigma);
        let shifted = p.with_terminal(move |x| x[0].clamp(-3.0, 3.0) + k, 1.0);
        let g = small_grid();
        let cfg = SchemeConfig::default();
        let (u1, _) = solve(&p, &g, 4.0, &cfg).unwrap();
        let (u2, _) = solve(&shifted, &g, 4.0, &cfg).unwrap();
        // each layer stops at tol_policy, so the shift is exact up to n_t of those
        let slack = g.n_t() as f64 * cfg.tol_policy * 10.0;
        for (a, b) in u1.values().iter().zip(u2.values()) {
            prop_assert!((b - a - k).abs() <= slack * (1.0 + a.abs() + k.abs()), "{a} {b} {k}");
        }
    }

    #[test]
    fn ordered_terminal_data_give_ordered_solutions(
        drift in -1.0..1.0f64,
        source in -1.0..1.0f64,
        bumps in prop::collection::vec(0.0..1.0f64, 33),
    ) {
        let p = family(drift, source, 1.0);
        let g = small_grid();
        let h = g.h();
        let nodal = move |x: &[f64]| {
            let k = ((x[0] + 3.0) / h).round().clamp(0.0, 32.0) as usize;
            bumps[k]
        };
        let lower = p.with_terminal(|x| x[0].abs().min(2.0), 1.0);
        let upper = p.with_terminal(move |x| x[0].abs().min(2.0) + nodal(x), 1.0 / h);
        let cfg = SchemeConfig { closure: BoundaryClosure::OutflowFree, ..SchemeConfig::default() };
        let (u1, _) = solve(&lower, &g, 4.0, &cfg).unwrap();
        let (u2, _) = solve(&upper, &g, 4.0, &cfg).unwrap();
        for (a, b) in u1.values().iter().zip(u2.values()) {
            prop_assert!(a - b <= 1e-12 * a.abs().max(b.abs()).max(1.0), "{a} > {b}");
        }
    }

    #[test]
    fn policy_residual_never_grows(
        drift in -1.0..1.0f64,
        source in -1.0..1.0f64,
        curvature in 0.0..2.0f64,
    ) {
        let p = family(drift, source, 1.0);
        let g = small_grid();
        let next: Vec<f64> = (0..g.n_nodes())
            .map(|i| {
                let x = g.node_coords(i)[0];
                x.clamp(-3.0, 3.0) + curvature * (x * x).min(4.0)
            })
            .collect();
        let r = step_backward(&p, &g, &next, g.n_t() - 1, 3.0, &SchemeConfig::default()).unwrap();
        prop_assert!(!r.residuals.is_empty());
        for w in r.residuals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15, "{:?}", r.residuals);
        }
    }

    #[test]
    fn quadratic_hamiltonian_is_closed_form(
        p0 in -3.0..3.0f64,
        p1 in -3.0..3.0f64,
        s in 0.3..2.0f64,
    ) {
        let mut spec = QuadraticSpec::new(2, 1.0);
        spec.sigma.scale = s;
        let prob = quadratic_problem(&spec).unwrap();
        let (v, a) = hamiltonian_min(&prob, 0.0, &[0.1, -0.2], &[p0, p1], 1e6, 8).unwrap();
        let q2 = s * s * (p0 * p0 + p1 * p1);
        prop_assert!((v + 0.5 * q2).abs() <= 1e-12 * (1.0 + q2));
        prop_assert!((a[0] + s * p0).abs() <= 1e-12 && (a[1] + s * p1).abs() <= 1e-12);
    }
}

#[test]
fn radius_above_escalation_threshold_is_stable() {
    let p = family(0.5, 0.5, 1.0);
    let g = Grid::new(vec![0.0], 4.0, 65, 64, 1.0).unwrap();
    let cfg = SchemeConfig::default();
    let esc = EscalationConfig::new(0.25, 3e-6);
    let (u, _, trace) = solve_with_truncation_escalation(&p, &g, &esc, &cfg).unwrap();
    assert!(trace.converged);
    for factor in [1.5, 2.0, 8.0] {
        let (v, _) = solve(&p, &g, factor * trace.final_radius, &cfg).unwrap();
        assert!(u.max_abs_diff(&v).unwrap() <= esc.tol, "factor {factor}");
    }
}

#[test]
fn sqrt_growth_sigma_solves() {
    let mut s = QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0);
    s.sigma.mode = SigmaMode::SqrtGrowth;
    s.sigma.clamp_radius = Some(4.0);
    s.g.clamp = Some(3.0);
    let p = quadratic_problem(&s).unwrap();
    let g = Grid::new(vec![0.0], 3.0, 33, 32, 1.0).unwrap();
    let esc = EscalationConfig::new(0.25, 1e-6 * 3.0);
    let (u, _, trace) = solve_with_truncation_escalation(&p, &g, &esc, &SchemeConfig::default()).unwrap();
    assert!(trace.converged);
    assert!(u.check_finite().is_ok());
}
