//! Cole-Hopf route for the quadratic family: v = e^{−u} solves the linear
//! equation ∂t v + b₂·Dv + ½Tr[σσᵀD²v] − f₂ v = 0, giving an oracle that is
//! independent of the nonlinear solver.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{Grid, GridError, ValueFunction};
use crate::pde_solver::{
    solve_rows, solve_with_truncation_escalation, EscalationConfig, Row, SchemeConfig, SolverError,
};
use crate::problem::{FamilyTag, HJBProblem};

#[derive(Debug, Error, PartialEq)]
pub enum ColeHopfError {
    #[error("Cole-Hopf transform needs the uncapped quadratic family with zero discount ({0})")]
    Unsupported(String),
    #[error("non-positive value {value} at layer {layer}, node {node}")]
    NonPositive { layer: usize, node: usize, value: f64 },
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Coefficients of the linear equation, borrowed from the parent problem.
#[derive(Clone, Debug)]
pub struct LinearParabolicProblem {
    parent: HJBProblem,
}

impl LinearParabolicProblem {
    pub fn dim(&self) -> usize {
        self.parent.dim()
    }
    pub fn horizon(&self) -> f64 {
        self.parent.horizon()
    }
    pub fn b2(&self, t: f64, x: &[f64]) -> Vec<f64> {
        self.parent.b2(t, x)
    }
    pub fn diffusion(&self, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
        self.parent.diffusion(t, x).to_dense()
    }
    pub fn f2(&self, t: f64, x: &[f64]) -> f64 {
        self.parent.f2(t, x)
    }
    /// v_T = exp(−g).
    pub fn terminal(&self, x: &[f64]) -> f64 {
        (-self.parent.g(x)).exp()
    }
}

pub fn to_linear(p: &HJBProblem) -> Result<LinearParabolicProblem, ColeHopfError> {
    if p.family() != FamilyTag::Quadratic {
        return Err(ColeHopfError::Unsupported(format!("family {:?}", p.family())));
    }
    if p.discount() != 0.0 {
        return Err(ColeHopfError::Unsupported(format!("discount {}", p.discount())));
    }
    Ok(LinearParabolicProblem { parent: p.clone() })
}

/// Neighbour weights and diagonal term of the linear operator at node i.
/// On a face the ghost value is ρ v_0 with ρ the ratio of the boundary node
/// to its inner neighbour, which is exact for exponentials.
fn assemble(
    grid: &Grid,
    a: &[f64],
    b: &[f64],
    f2: f64,
    v: &[f64],
    i: usize,
    dt: f64,
) -> Row {
    let d = grid.dim();
    let n = grid.n_x();
    let h = grid.h();
    let h2 = h * h;
    let mut off: Vec<(usize, f64)> = Vec::with_capacity(2 * d + 2 * d * d);
    // L v_i = Σ w_j v_j + c v_i
    let mut c = 0.0;
    let mut interior = vec![true; d];
    for k in 0..d {
        let s = grid.stride(k);
        let ik = grid.axis_index(i, k);
        let diff = 0.5 * a[k * d + k] / h2;
        let (bp, bm) = (b[k].max(0.0) / h, (-b[k]).max(0.0) / h);
        if ik == 0 || ik + 1 == n {
            interior[k] = false;
            let (inner, rho) = if ik == 0 {
                (i + s, v[i] / v[i + s])
            } else {
                (i - s, v[i] / v[i - s])
            };
            // Ghost outside the box equals ρ v_i.
            let (w_in_drift, w_ghost_drift) = if ik == 0 { (bp, bm) } else { (bm, bp) };
            off.push((inner, diff + w_in_drift));
            c += -2.0 * diff - bp - bm + (diff + w_ghost_drift) * rho;
        } else {
            off.push((i + s, diff + bp));
            off.push((i - s, diff + bm));
            c += -2.0 * diff - bp - bm;
        }
    }
    for k in 0..d {
        for l in k + 1..d {
            let akl = a[k * d + l];
            if akl == 0.0 || !interior[k] || !interior[l] {
                continue;
            }
            let (sk, sl) = (grid.stride(k), grid.stride(l));
            let q = akl.abs() / (2.0 * h2);
            if akl > 0.0 {
                off.push((i + sk + sl, q));
                off.push((i - sk - sl, q));
            } else {
                off.push((i + sk - sl, q));
                off.push((i - sk + sl, q));
            }
            for j in [i + sk, i - sk, i + sl, i - sl] {
                off.push((j, -q));
            }
            c -= 2.0 * q;
        }
    }
    off.sort_by_key(|e| e.0);
    off.dedup_by(|x, y| {
        if x.0 == y.0 {
            y.1 += x.1;
            true
        } else {
            false
        }
    });
    Row {
        diag: 1.0 - dt * c + dt * f2,
        off: off
            .into_iter()
            .filter(|e| e.1 != 0.0)
            .map(|(j, w)| (j, -dt * w))
            .collect(),
    }
}

/// Implicit backward Euler with upwind drift and central diffusion. The
/// boundary ratio is lagged and refined by fixed-point iteration.
pub fn solve_linear(
    lp: &LinearParabolicProblem,
    grid: &Grid,
    cfg: &SchemeConfig,
) -> Result<ValueFunction, ColeHopfError> {
    cfg.validate()?;
    if grid.dim() != lp.dim() {
        return Err(SolverError::DimensionMismatch {
            grid: grid.dim(),
            problem: lp.dim(),
        }
        .into());
    }
    let n = grid.n_nodes();
    let nt = grid.n_t();
    let dt = grid.dt();
    let mut v = ValueFunction::zeros(grid.clone());
    let coords: Vec<Vec<f64>> = (0..n).map(|i| grid.node_coords(i)).collect();
    let terminal: Vec<f64> = coords.iter().map(|x| lp.terminal(x)).collect();
    check_positive(&terminal, nt)?;
    v.layer_mut(nt).copy_from_slice(&terminal);
    for layer in (0..nt).rev() {
        let t = grid.time(layer);
        let coef: Vec<(Vec<f64>, Vec<f64>, f64)> = coords
            .par_iter()
            .with_min_len(256)
            .map(|x| {
                let a: Vec<f64> = lp.diffusion(t, x).into_iter().flatten().collect();
                (a, lp.b2(t, x), lp.f2(t, x))
            })
            .collect();
        let next = v.layer(layer + 1).to_vec();
        let mut cur = next.clone();
        for _ in 0..50 {
            let rows: Vec<Row> = (0..n)
                .into_par_iter()
                .with_min_len(256)
                .map(|i| assemble(grid, &coef[i].0, &coef[i].1, coef[i].2, &cur, i, dt))
                .collect();
            let new = solve_rows(grid, &rows, &next, &cur, cfg.tol_linear, cfg.max_linear_iters, t)?;
            check_positive(&new, layer)?;
            let change = new
                .iter()
                .zip(&cur)
                .map(|(a, b)| ((a - b) / a).abs())
                .fold(0.0, f64::max);
            cur = new;
            if change <= 1e-14 {
                break;
            }
        }
        v.layer_mut(layer).copy_from_slice(&cur);
    }
    Ok(v)
}

fn check_positive(vals: &[f64], layer: usize) -> Result<(), ColeHopfError> {
    match vals.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        Some(node) => Err(ColeHopfError::NonPositive {
            layer,
            node,
            value: vals[node],
        }),
        None => Ok(()),
    }
}

/// Inverse transform: nodewise u = −ln v.
pub fn invert(v: &ValueFunction) -> Result<ValueFunction, ColeHopfError> {
    let nn = v.grid().n_nodes();
    if let Some(k) = v.values().iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(ColeHopfError::NonPositive {
            layer: k / nn,
            node: k % nn,
            value: v.values()[k],
        });
    }
    Ok(v.map(|x| -x.ln()))
}

/// Nodewise v = e^{−u}.
pub fn transform(u: &ValueFunction) -> ValueFunction {
    u.map(|x| (-x).exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossCheckReport {
    pub sup_discrepancy: f64,
    pub mean_discrepancy: f64,
    pub core_fraction: f64,
    pub core_nodes: usize,
    pub final_radius: f64,
}

/// Agreement of the escalated nonlinear solve with the Cole-Hopf route on
/// the interior core, over every layer.
pub fn cross_check(
    p: &HJBProblem,
    grid: &Grid,
    esc: &EscalationConfig,
    cfg: &SchemeConfig,
) -> Result<CrossCheckReport, ColeHopfError> {
    let lp = to_linear(p)?;
    let (u, _, trace) = solve_with_truncation_escalation(p, grid, esc, cfg)?;
    let w = invert(&solve_linear(&lp, grid, cfg)?)?;
    Ok(compare_on_core(&u, &w, esc.core_fraction, trace.final_radius))
}

pub fn compare_on_core(u: &ValueFunction, w: &ValueFunction, fraction: f64, radius: f64) -> CrossCheckReport {
    let g = u.grid();
    let core = g.core_nodes(fraction);
    let mut sup: f64 = 0.0;
    let mut diffs = Vec::with_capacity(core.len() * g.n_layers());
    for l in 0..g.n_layers() {
        let (a, b) = (u.layer(l), w.layer(l));
        for &i in &core {
            let e = (a[i] - b[i]).abs();
            sup = sup.max(e);
            diffs.push(e);
        }
    }
    CrossCheckReport {
        sup_discrepancy: sup,
        mean_discrepancy: crate::mc_verify::pairwise_sum(&diffs) / diffs.len().max(1) as f64,
        core_fraction: fraction,
        core_nodes: core.len(),
        final_radius: radius,
    }
}
