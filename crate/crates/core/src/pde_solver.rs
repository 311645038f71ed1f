//! Monotone backward-in-time finite-difference solver for the HJB equation
//! with a truncated control ball, and the truncation-escalation loop.
//!
//! Discretization: upwind first differences for the drift (forward
//! difference where a drift component is nonnegative), central second
//! differences for the diagonal diffusion, the 7-point monotone splitting
//! for cross terms. The discount enters explicitly through the factor
//! (1 + c dt) on the later layer.

use rayon::prelude::*;
use serde::Deserialize;
use thiserror::Error;

use crate::grid::{layer_gradient, norm, Grid, GridError, ValueFunction};
use crate::problem::{control_bound_radius, HJBProblem, ProblemError};

#[derive(Debug, Error, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid solver setting {name}: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
    #[error("grid dimension {grid} does not match problem dimension {problem}")]
    DimensionMismatch { grid: usize, problem: usize },
    #[error("CFL violated: dt = {dt} exceeds the monotonicity limit {limit}")]
    Cfl { dt: f64, limit: f64 },
    #[error("diffusion not diagonally dominant at node {node} (t = {t}); cross terms would break monotonicity")]
    NotDiagonallyDominant { node: usize, t: f64 },
    #[error("policy iteration did not converge at t = {t} after {sweeps} sweeps; residuals {residuals:?}")]
    PolicyIteration {
        t: f64,
        sweeps: usize,
        residuals: Vec<f64>,
    },
    #[error("linear solve stalled at t = {t}: {iterations} sweeps, last change {change}")]
    LinearSolve { t: f64, iterations: usize, change: f64 },
    #[error("non-finite {what} at t = {t}, node {node}")]
    NonFinite { what: &'static str, t: f64, node: usize },
    #[error("truncation escalation did not converge within {} stages", .trace.stages.len())]
    Escalation { trace: Box<TruncationTrace> },
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TimeStepping {
    ExplicitMonotone,
    #[default]
    ImplicitPolicyIteration,
}

/// How the drift and diffusion stencils are closed on the faces of the box.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryClosure {
    /// Linear-extrapolation ghost (zero normal second difference). Exact on
    /// affine data; not monotone where the drift points out of the box.
    #[default]
    Extrapolation,
    /// Zero normal diffusion and the outward drift component dropped.
    /// Monotone everywhere.
    OutflowFree,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SchemeConfig {
    pub mode: TimeStepping,
    pub m_alpha: usize,
    pub tol_policy: f64,
    pub max_sweeps: usize,
    pub tol_linear: f64,
    pub max_linear_iters: usize,
    pub closure: BoundaryClosure,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            mode: TimeStepping::ImplicitPolicyIteration,
            m_alpha: 16,
            tol_policy: 1e-10,
            max_sweeps: 50,
            tol_linear: 1e-12,
            max_linear_iters: 200_000,
            closure: BoundaryClosure::Extrapolation,
        }
    }
}

impl SchemeConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |name, reason: &str| {
            Err(SolverError::InvalidConfig {
                name,
                reason: reason.to_string(),
            })
        };
        if self.m_alpha == 0 {
            return bad("m_alpha", "must be positive");
        }
        if !(self.tol_policy > 0.0 && self.tol_policy.is_finite()) {
            return bad("tol_policy", "must be positive");
        }
        if self.max_sweeps == 0 {
            return bad("max_sweeps", "must be positive");
        }
        if !(self.tol_linear > 0.0 && self.tol_linear.is_finite()) {
            return bad("tol_linear", "must be positive");
        }
        if self.max_linear_iters == 0 {
            return bad("max_linear_iters", "must be positive");
        }
        Ok(())
    }
}

/// Feedback law sampled on every node of every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlField {
    grid: Grid,
    controls: Vec<f64>,
    resolution: f64,
}

impl ControlField {
    pub fn zeros(grid: Grid) -> Self {
        let n = grid.n_layers() * grid.n_nodes() * grid.dim();
        Self {
            grid,
            controls: vec![0.0; n],
            resolution: 0.0,
        }
    }

    /// Builds a field from layer-major, node-major, component-minor values.
    pub fn from_values(grid: Grid, controls: Vec<f64>, resolution: f64) -> Result<Self, GridError> {
        let n = grid.n_layers() * grid.n_nodes() * grid.dim();
        if controls.len() != n {
            return Err(GridError::DimensionMismatch {
                expected: n,
                got: controls.len(),
            });
        }
        Ok(Self {
            grid,
            controls,
            resolution,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.controls
    }

    /// Mesh resolution of the minimization that produced the field
    /// (0 for closed-form minimizers).
    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn control(&self, layer: usize, node: usize) -> &[f64] {
        let d = self.grid.dim();
        let k = (layer * self.grid.n_nodes() + node) * d;
        &self.controls[k..k + d]
    }

    fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        let w = self.grid.n_nodes() * self.grid.dim();
        &mut self.controls[layer * w..(layer + 1) * w]
    }

    /// Multilinear in space, linear in time, componentwise.
    pub fn interpolate(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, GridError> {
        self.grid.check_inside(t, x)?;
        Ok(self.interpolate_unchecked(t, x))
    }

    pub(crate) fn interpolate_unchecked(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let d = self.grid.dim();
        let (k0, k1, wt) = self.grid.time_weights(t);
        let sw = self.grid.space_weights(x);
        let mut out = vec![0.0; d];
        for (layer, lw) in [(k0, 1.0 - wt), (k1, wt)] {
            if lw == 0.0 {
                continue;
            }
            for &(i, w) in &sw {
                for (o, a) in out.iter_mut().zip(self.control(layer, i)) {
                    *o += lw * w * a;
                }
            }
        }
        out
    }

    /// Allocation-free interpolation for d ≤ 8 (falls back otherwise).
    pub(crate) fn interpolate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let g = &self.grid;
        let d = g.dim();
        if d > 8 {
            out.copy_from_slice(&self.interpolate_unchecked(t, x));
            return;
        }
        let (k0, k1, wt) = g.time_weights(t);
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        for a in 0..d {
            (base[a], frac[a]) = g.cell(a, x[a]);
        }
        out.fill(0.0);
        let nx = g.n_x();
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut flat = 0;
            for a in 0..d {
                let bit = (corner >> (d - 1 - a)) & 1;
                w *= if bit == 1 { frac[a] } else { 1.0 - frac[a] };
                flat = flat * nx + base[a] + bit;
            }
            if w == 0.0 {
                continue;
            }
            for (layer, lw) in [(k0, 1.0 - wt), (k1, wt)] {
                if lw != 0.0 {
                    for (o, a) in out.iter_mut().zip(self.control(layer, flat)) {
                        *o += lw * w * a;
                    }
                }
            }
        }
    }

    pub fn max_norm(&self) -> f64 {
        self.controls
            .chunks(self.grid.dim())
            .map(norm)
            .fold(0.0, f64::max)
    }
}

// ---------------------------------------------------------------------------
// Hamiltonian minimization

/// Radial and angular spacing of the polar control mesh of radius `r`.
pub fn control_mesh_resolution(d: usize, r: f64, m_alpha: usize) -> f64 {
    let m = m_alpha as f64;
    let angular = match d {
        1 => 0.0,
        2 => 2.0 * (std::f64::consts::PI / (4.0 * m)).sin(),
        3 => (4.0 * std::f64::consts::PI / (4.0 * m * m)).sqrt(),
        _ => std::f64::consts::FRAC_1_SQRT_2,
    };
    r / m + r * angular
}

fn unit_directions(d: usize, m_alpha: usize) -> Vec<Vec<f64>> {
    match d {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => {
            let n = 4 * m_alpha;
            (0..n)
                .map(|j| {
                    let th = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                    vec![th.cos(), th.sin()]
                })
                .collect()
        }
        3 => {
            let n = 4 * m_alpha * m_alpha;
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..n)
                .map(|j| {
                    let z = 1.0 - 2.0 * (j as f64 + 0.5) / n as f64;
                    let r = (1.0 - z * z).sqrt();
                    let th = golden * j as f64;
                    vec![r * th.cos(), r * th.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut dirs = Vec::new();
            for i in 0..d {
                for s in [-1.0, 1.0] {
                    let mut e = vec![0.0; d];
                    e[i] = s;
                    dirs.push(e);
                }
                for j in i + 1..d {
                    for (si, sj) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                        let mut e = vec![0.0; d];
                        e[i] = si * std::f64::consts::FRAC_1_SQRT_2;
                        e[j] = sj * std::f64::consts::FRAC_1_SQRT_2;
                        dirs.push(e);
                    }
                }
            }
            dirs
        }
    }
}

/// Polar mesh of the ball B(0, r): the origin plus `m_alpha` radii times a
/// set of uniform directions, ordered by norm then lexicographically so
/// that a first strict minimum realizes the tie-breaking rule.
pub fn control_mesh(d: usize, r: f64, m_alpha: usize) -> Vec<Vec<f64>> {
    let dirs = unit_directions(d, m_alpha);
    let mut pts = vec![vec![0.0; d]];
    for k in 1..=m_alpha {
        let rad = r * k as f64 / m_alpha as f64;
        for e in &dirs {
            pts.push(e.iter().map(|v| v * rad).collect());
        }
    }
    pts.sort_by(|a, b| prefer(a, b));
    pts
}

fn prefer(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    norm(a)
        .total_cmp(&norm(b))
        .then_with(|| {
            a.iter()
                .zip(b)
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
}

fn project_ball(mut a: Vec<f64>, r: f64) -> Vec<f64> {
    let n = norm(&a);
    if n > r {
        a.iter_mut().for_each(|v| *v *= r / n);
    }
    a
}

/// min over α ∈ A ∩ B(0, R) of b₁(t,x,α)·grad + f₁(t,x,α), and its
/// minimizer. The quadratic families use the exact minimizer −σ grad
/// projected onto the ball; other problems search the polar mesh.
pub fn hamiltonian_min(
    p: &HJBProblem,
    t: f64,
    x: &[f64],
    grad: &[f64],
    radius: f64,
    m_alpha: usize,
) -> Result<(f64, Vec<f64>), SolverError> {
    if !(radius > 0.0) {
        return Err(SolverError::InvalidConfig {
            name: "radius",
            reason: format!("must be positive, got {radius}"),
        });
    }
    let d = p.dim();
    let r = p.control_set().truncated_radius(radius);
    let nonfinite = || SolverError::NonFinite {
        what: "Hamiltonian",
        t,
        node: 0,
    };
    if p.family().has_quadratic_structure() {
        let s = p.sigma(t, x);
        // b₁ = σᵀα gives b₁·p = α·(σ p).
        let q: Vec<f64> = (0..d).map(|k| (0..d).map(|i| s[k][i] * grad[i]).sum()).collect();
        let a = project_ball(q.iter().map(|v| -v).collect(), r);
        let val: f64 = a.iter().zip(&q).map(|(ai, qi)| ai * qi).sum::<f64>() + 0.5 * norm(&a).powi(2);
        if !val.is_finite() {
            return Err(nonfinite());
        }
        return Ok((val, a));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for a in control_mesh(d, r, m_alpha) {
        let b = p.b1(t, x, &a);
        let v: f64 = b.iter().zip(grad).map(|(u, w)| u * w).sum::<f64>() + p.f1(t, x, &a);
        if !v.is_finite() {
            return Err(nonfinite());
        }
        if best.as_ref().is_none_or(|(bv, _)| v < *bv) {
            best = Some((v, a));
        }
    }
    Ok(best.expect("mesh contains the origin"))
}

// ---------------------------------------------------------------------------
// Discrete operator

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Face {
    Low,
    Interior,
    High,
}

/// One row of a linear system: diag·u_i + Σ off·u_j = rhs_i.
#[derive(Clone, Debug, Default)]
pub(crate) struct Row {
    pub diag: f64,
    pub off: Vec<(usize, f64)>,
}

/// Solves the sparse system: Thomas elimination in one dimension,
/// Gauss–Seidel otherwise.
pub(crate) fn solve_rows(
    grid: &Grid,
    rows: &[Row],
    rhs: &[f64],
    guess: &[f64],
    tol: f64,
    max_iters: usize,
    t: f64,
) -> Result<Vec<f64>, SolverError> {
    let n = rows.len();
    if grid.dim() == 1 {
        let mut lo = vec![0.0; n];
        let mut up = vec![0.0; n];
        let mut di = vec![0.0; n];
        for (i, r) in rows.iter().enumerate() {
            di[i] = r.diag;
            for &(j, w) in &r.off {
                if j + 1 == i {
                    lo[i] += w;
                } else if j == i + 1 {
                    up[i] += w;
                } else {
                    unreachable!("non-tridiagonal row in one dimension");
                }
            }
        }
        let mut c = vec![0.0; n];
        let mut d = vec![0.0; n];
        let mut den = di[0];
        c[0] = up[0] / den;
        d[0] = rhs[0] / den;
        for i in 1..n {
            den = di[i] - lo[i] * c[i - 1];
            c[i] = up[i] / den;
            d[i] = (rhs[i] - lo[i] * d[i - 1]) / den;
        }
        let mut x = vec![0.0; n];
        x[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            x[i] = d[i] - c[i] * x[i + 1];
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(SolverError::NonFinite {
                what: "linear solve",
                t,
                node: i,
            });
        }
        return Ok(x);
    }
    let mut x = guess.to_vec();
    let mut change = f64::INFINITY;
    for it in 0..max_iters {
        change = 0.0;
        let mut scale: f64 = 1.0;
        for (i, r) in rows.iter().enumerate() {
            let s: f64 = r.off.iter().map(|&(j, w)| w * x[j]).sum();
            let v = (rhs[i] - s) / r.diag;
            change = change.max((v - x[i]).abs());
            scale = scale.max(v.abs());
            x[i] = v;
        }
        if !change.is_finite() {
            return Err(SolverError::NonFinite {
                what: "linear solve",
                t,
                node: 0,
            });
        }
        if change <= tol * scale {
            let _ = it;
            return Ok(x);
        }
    }
    Err(SolverError::LinearSolve {
        t,
        iterations: max_iters,
        change,
    })
}

/// Coefficients frozen at one node and time.
struct NodeCoef {
    x: Vec<f64>,
    b2: Vec<f64>,
    f2: f64,
    /// σσᵀ, row-major dense.
    a: Vec<f64>,
    /// Diagonal of σ when σ is diagonal (enables the closed-form path).
    sdiag: Option<Vec<f64>>,
}

struct Scheme<'a> {
    p: &'a HJBProblem,
    grid: &'a Grid,
    cfg: &'a SchemeConfig,
    radius: f64,
    quadratic: bool,
    mesh: Vec<Vec<f64>>,
}

/// Per-axis effective one-sided differences (after the boundary closure).
fn one_sided(grid: &Grid, closure: BoundaryClosure, v: &[f64], i: usize) -> (Vec<f64>, Vec<f64>, Vec<Face>) {
    let d = grid.dim();
    let h = grid.h();
    let n = grid.n_x();
    let mut dp = vec![0.0; d];
    let mut dm = vec![0.0; d];
    let mut faces = vec![Face::Interior; d];
    for k in 0..d {
        let s = grid.stride(k);
        let ik = grid.axis_index(i, k);
        let fwd = (ik + 1 < n).then(|| (v[i + s] - v[i]) / h);
        let bwd = (ik > 0).then(|| (v[i] - v[i - s]) / h);
        match (bwd, fwd) {
            (Some(b), Some(f)) => {
                dm[k] = b;
                dp[k] = f;
            }
            (None, Some(f)) => {
                faces[k] = Face::Low;
                dp[k] = f;
                dm[k] = match closure {
                    BoundaryClosure::Extrapolation => f,
                    BoundaryClosure::OutflowFree => 0.0,
                };
            }
            (Some(b), None) => {
                faces[k] = Face::High;
                dm[k] = b;
                dp[k] = match closure {
                    BoundaryClosure::Extrapolation => b,
                    BoundaryClosure::OutflowFree => 0.0,
                };
            }
            (None, None) => unreachable!("n_x >= 3"),
        }
    }
    (dp, dm, faces)
}

fn upwind(b: f64, dp: f64, dm: f64) -> f64 {
    b.max(0.0) * dp + b.min(0.0) * dm
}

/// Exact minimizer of (sα + b2)⁺ dp − (sα + b2)⁻ dm + ½(1 + μ)α² on
/// [lo, hi], with ties to the smaller |α| then the smaller α.
fn axis_min(s: f64, b2: f64, dp: f64, dm: f64, mu: f64, lo: f64, hi: f64) -> (f64, f64) {
    let phi = |a: f64| upwind(s * a + b2, dp, dm) + 0.5 * (1.0 + mu) * a * a;
    let a0 = -b2 / s;
    let mut cands = Vec::with_capacity(2);
    let (alo, ahi) = (a0.max(lo), hi);
    if alo <= ahi {
        cands.push((-s * dp / (1.0 + mu)).clamp(alo, ahi));
    }
    let (blo, bhi) = (lo, a0.min(hi));
    if blo <= bhi {
        cands.push((-s * dm / (1.0 + mu)).clamp(blo, bhi));
    }
    let mut best: (f64, f64) = (f64::INFINITY, 0.0);
    for a in cands {
        let v = phi(a);
        let better = v < best.0
            || (v == best.0 && (a.abs() < best.1.abs() || (a.abs() == best.1.abs() && a < best.1)));
        if better {
            best = (v, a);
        }
    }
    best
}

impl<'a> Scheme<'a> {
    fn new(p: &'a HJBProblem, grid: &'a Grid, radius: f64, cfg: &'a SchemeConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        if grid.dim() != p.dim() {
            return Err(SolverError::DimensionMismatch {
                grid: grid.dim(),
                problem: p.dim(),
            });
        }
        if (grid.horizon() - p.horizon()).abs() > 1e-12 * p.horizon() {
            return Err(SolverError::InvalidConfig {
                name: "horizon",
                reason: format!("grid horizon {} differs from problem horizon {}", grid.horizon(), p.horizon()),
            });
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(SolverError::InvalidConfig {
                name: "radius",
                reason: format!("must be positive and finite, got {radius}"),
            });
        }
        let r = p.control_set().truncated_radius(radius);
        let quadratic = p.family().has_quadratic_structure();
        let mesh = if quadratic {
            Vec::new()
        } else {
            control_mesh(p.dim(), r, cfg.m_alpha)
        };
        let s = Self {
            p,
            grid,
            cfg,
            radius: r,
            quadratic,
            mesh,
        };
        if cfg.mode == TimeStepping::ExplicitMonotone {
            s.check_cfl()?;
        }
        Ok(s)
    }

    fn check_cfl(&self) -> Result<(), SolverError> {
        let g = self.grid;
        let d = g.dim();
        let h = g.h();
        let mut a_max: f64 = 0.0;
        let mut b_max: f64 = 0.0;
        for layer in 0..g.n_layers() {
            let t = g.time(layer);
            let coefs = self.coefficients(t)?;
            for c in &coefs {
                let a = crate::matrix_lemmas::SymmetricMatrix::from_fn(d, |i, j| c.a[i * d + j]);
                a_max = a_max.max(a.max_eigenvalue());
                let b = if let (true, Some(sd)) = (self.quadratic, &c.sdiag) {
                    (0..d).map(|k| sd[k].abs() * self.radius + c.b2[k].abs()).sum()
                } else {
                    let mut m: f64 = 0.0;
                    let mesh = if self.quadratic {
                        control_mesh(d, self.radius, self.cfg.m_alpha)
                    } else {
                        self.mesh.clone()
                    };
                    for al in &mesh {
                        let b1 = self.p.b1(t, &c.x, al);
                        m = m.max(b1.iter().zip(&c.b2).map(|(u, v)| (u + v).abs()).sum());
                    }
                    m
                };
                b_max = b_max.max(b);
            }
        }
        let limit = h * h / (d as f64 * a_max + h * b_max);
        if g.dt() > limit {
            return Err(SolverError::Cfl { dt: g.dt(), limit });
        }
        Ok(())
    }

    fn coefficients(&self, t: f64) -> Result<Vec<NodeCoef>, SolverError> {
        let g = self.grid;
        let d = g.dim();
        let p = self.p;
        (0..g.n_nodes())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let x = g.node_coords(i);
                let b2 = p.b2(t, &x);
                let f2 = p.f2(t, &x);
                let s = p.sigma(t, &x);
                let nf = |what| SolverError::NonFinite { what, t, node: i };
                if b2.iter().any(|v| !v.is_finite()) {
                    return Err(nf("b2"));
                }
                if !f2.is_finite() {
                    return Err(nf("f2"));
                }
                if s.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(nf("sigma"));
                }
                let mut a = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        a[r * d + c] = (0..d).map(|k| s[r][k] * s[c][k]).sum();
                    }
                }
                let diagonal = (0..d).all(|r| (0..d).all(|c| r == c || s[r][c] == 0.0));
                let sdiag = (diagonal && (0..d).all(|k| s[k][k] > 0.0)).then(|| (0..d).map(|k| s[k][k]).collect());
                Ok(NodeCoef { x, b2, f2, a, sdiag })
            })
            .collect()
    }

    /// Minimizes the discrete Hamiltonian Σ_k [b_k⁺ Dp_k − b_k⁻ Dm_k] + f at
    /// node i on layer v. Returns (value without f2, control).
    fn minimize_at(&self, t: f64, c: &NodeCoef, v: &[f64], i: usize) -> Result<(f64, Vec<f64>), SolverError> {
        let (dp, dm, _) = one_sided(self.grid, self.cfg.closure, v, i);
        let d = self.grid.dim();
        let r = self.radius;
        if let (true, Some(sd)) = (self.quadratic, &c.sdiag) {
            let (lo, hi) = if d == 1 { (-r, r) } else { (f64::NEG_INFINITY, f64::INFINITY) };
            let solve = |mu: f64, lo: f64, hi: f64| -> Vec<f64> {
                (0..d).map(|k| axis_min(sd[k], c.b2[k], dp[k], dm[k], mu, lo, hi).1).collect()
            };
            let mut a = solve(0.0, lo, hi);
            if d > 1 && norm(&a) > r {
                // Lagrange multiplier for |α| ≤ R, found by bisection.
                let (lo, hi) = (-r, r);
                let mut mu_hi = 1.0;
                let mut iters = 0;
                while norm(&solve(mu_hi, lo, hi)) > r && iters < 200 {
                    mu_hi *= 2.0;
                    iters += 1;
                }
                let mut mu_lo = 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (mu_lo + mu_hi);
                    if norm(&solve(mid, lo, hi)) > r {
                        mu_lo = mid;
                    } else {
                        mu_hi = mid;
                    }
                }
                a = project_ball(solve(mu_hi, lo, hi), r);
            }
            let val: f64 = (0..d)
                .map(|k| upwind(sd[k] * a[k] + c.b2[k], dp[k], dm[k]) + 0.5 * a[k] * a[k])
                .sum();
            return Ok((val, a));
        }
        let mesh_owned;
        let mesh = if self.mesh.is_empty() {
            mesh_owned = control_mesh(d, r, self.cfg.m_alpha);
            &mesh_owned
        } else {
            &self.mesh
        };
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for al in mesh {
            let val = self.drift_value(t, c, al, &dp, &dm);
            if !val.is_finite() {
                return Err(SolverError::NonFinite {
                    what: "Hamiltonian",
                    t,
                    node: i,
                });
            }
            if best.is_none_or(|(bv, _)| val < bv) {
                best = Some((val, al));
            }
        }
        let (val, al) = best.expect("mesh contains the origin");
        Ok((val, al.clone()))
    }

    fn drift_value(&self, t: f64, c: &NodeCoef, al: &[f64], dp: &[f64], dm: &[f64]) -> f64 {
        let b1 = self.p.b1(t, &c.x, al);
        let mut val = self.p.f1(t, &c.x, al);
        for k in 0..dp.len() {
            val += upwind(b1[k] + c.b2[k], dp[k], dm[k]);
        }
        val
    }

    /// Discrete Hamiltonian of a fixed control at node i.
    fn value_of(&self, t: f64, c: &NodeCoef, v: &[f64], i: usize, al: &[f64]) -> f64 {
        let (dp, dm, _) = one_sided(self.grid, self.cfg.closure, v, i);
        self.drift_value(t, c, al, &dp, &dm)
    }

    fn drift(&self, t: f64, c: &NodeCoef, al: &[f64]) -> Vec<f64> {
        if let (true, Some(sd)) = (self.quadratic, &c.sdiag) {
            (0..al.len()).map(|k| sd[k] * al[k] + c.b2[k]).collect()
        } else {
            let b1 = self.p.b1(t, &c.x, al);
            b1.iter().zip(&c.b2).map(|(u, v)| u + v).collect()
        }
    }

    /// L_α u_i = Σ w_j (u_j − u_i): the neighbour weights at node i.
    fn weights(&self, t: f64, c: &NodeCoef, al: &[f64], i: usize) -> Result<Vec<(usize, f64)>, SolverError> {
        let g = self.grid;
        let d = g.dim();
        let h = g.h();
        let h2 = h * h;
        let n = g.n_x();
        let b = self.drift(t, c, al);
        let mut w: Vec<(usize, f64)> = Vec::with_capacity(2 * d + 2 * d * d);
        let faces: Vec<Face> = (0..d)
            .map(|k| match g.axis_index(i, k) {
                0 => Face::Low,
                ik if ik + 1 == n => Face::High,
                _ => Face::Interior,
            })
            .collect();
        let closure = self.cfg.closure;
        for k in 0..d {
            let s = g.stride(k);
            let bk = b[k];
            match (faces[k], closure) {
                (Face::Interior, _) => {
                    let diff = 0.5 * c.a[k * d + k] / h2;
                    w.push((i + s, bk.max(0.0) / h + diff));
                    w.push((i - s, (-bk).max(0.0) / h + diff));
                }
                (Face::Low, BoundaryClosure::Extrapolation) => w.push((i + s, bk / h)),
                (Face::Low, BoundaryClosure::OutflowFree) => w.push((i + s, bk.max(0.0) / h)),
                (Face::High, BoundaryClosure::Extrapolation) => w.push((i - s, -bk / h)),
                (Face::High, BoundaryClosure::OutflowFree) => w.push((i - s, (-bk).max(0.0) / h)),
            }
        }
        // Cross terms: 7-point splitting at nodes interior in both axes.
        for k in 0..d {
            for l in k + 1..d {
                let akl = c.a[k * d + l];
                if akl == 0.0 || faces[k] != Face::Interior || faces[l] != Face::Interior {
                    continue;
                }
                let akk = c.a[k * d + k];
                let all = c.a[l * d + l];
                let offk: f64 = (0..d).filter(|&j| j != k).map(|j| c.a[k * d + j].abs()).sum();
                let offl: f64 = (0..d).filter(|&j| j != l).map(|j| c.a[l * d + j].abs()).sum();
                if akk < offk || all < offl {
                    return Err(SolverError::NotDiagonallyDominant { node: i, t });
                }
                let (sk, sl) = (g.stride(k), g.stride(l));
                let q = akl.abs() / (2.0 * h2);
                if akl > 0.0 {
                    w.push((i + sk + sl, q));
                    w.push((i - sk - sl, q));
                } else {
                    w.push((i + sk - sl, q));
                    w.push((i - sk + sl, q));
                }
                for j in [i + sk, i - sk, i + sl, i - sl] {
                    w.push((j, -q));
                }
            }
        }
        w.sort_by_key(|e| e.0);
        w.dedup_by(|a, b| {
            if a.0 == b.0 {
                b.1 += a.1;
                true
            } else {
                false
            }
        });
        w.retain(|e| e.1 != 0.0);
        Ok(w)
    }

    fn minimize_layer(&self, t: f64, coefs: &[NodeCoef], v: &[f64]) -> Result<Vec<(f64, Vec<f64>)>, SolverError> {
        (0..coefs.len())
            .into_par_iter()
            .with_min_len(64)
            .map(|i| self.minimize_at(t, &coefs[i], v, i))
            .collect()
    }

    fn step(&self, layer: usize, u_next: &[f64]) -> Result<StepResult, SolverError> {
        let g = self.grid;
        let t = g.time(layer);
        let dt = g.dt();
        let disc = 1.0 + self.p.discount() * dt;
        let coefs = self.coefficients(t)?;
        let n = g.n_nodes();
        let d = g.dim();

        if self.cfg.mode == TimeStepping::ExplicitMonotone {
            let mins = self.minimize_layer(t, &coefs, u_next)?;
            let out: Vec<f64> = (0..n)
                .into_par_iter()
                .with_min_len(256)
                .map(|i| {
                    let w = self.weights(t, &coefs[i], &mins[i].1, i)?;
                    let lu: f64 = w.iter().map(|&(j, wj)| wj * (u_next[j] - u_next[i])).sum();
                    let f1 = self.p.f1(t, &coefs[i].x, &mins[i].1);
                    Ok(disc * u_next[i] + dt * (lu + f1 + coefs[i].f2))
                })
                .collect::<Result<_, SolverError>>()?;
            if let Some(i) = out.iter().position(|v| !v.is_finite()) {
                return Err(SolverError::NonFinite { what: "value", t, node: i });
            }
            let controls = mins.into_iter().flat_map(|m| m.1).collect();
            return Ok(StepResult {
                values: out,
                controls,
                residuals: Vec::new(),
            });
        }

        let base: Vec<f64> = u_next.iter().map(|v| disc * v).collect();
        let mut policy: Vec<Vec<f64>> = self.minimize_layer(t, &coefs, u_next)?.into_iter().map(|m| m.1).collect();
        let mut v = u_next.to_vec();
        let mut residuals = Vec::new();
        let scale = base.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        for _ in 0..self.cfg.max_sweeps {
            // Defect correction: the residual is formed in difference form,
            // so constants and affine data pass through without roundoff.
            let (rows, defect): (Vec<Row>, Vec<f64>) = (0..n)
                .into_par_iter()
                .with_min_len(256)
                .map(|i| {
                    let w = self.weights(t, &coefs[i], &policy[i], i)?;
                    let f1 = self.p.f1(t, &coefs[i].x, &policy[i]);
                    let lv: f64 = w.iter().map(|&(j, wj)| wj * (v[j] - v[i])).sum();
                    let r = base[i] + dt * (f1 + coefs[i].f2) - v[i] + dt * lv;
                    let sum: f64 = w.iter().map(|e| e.1).sum();
                    let row = Row {
                        diag: 1.0 + dt * sum,
                        off: w.into_iter().map(|(j, wj)| (j, -dt * wj)).collect(),
                    };
                    Ok((row, r))
                })
                .collect::<Result<Vec<_>, SolverError>>()?
                .into_iter()
                .unzip();
            let zero = vec![0.0; n];
            let delta = solve_rows(g, &rows, &defect, &zero, self.cfg.tol_linear, self.cfg.max_linear_iters, t)?;
            let v_new: Vec<f64> = v.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let mins = self.minimize_layer(t, &coefs, &v_new)?;
            let res = (0..n)
                .into_par_iter()
                .with_min_len(256)
                .map(|i| dt * (self.value_of(t, &coefs[i], &v_new, i, &policy[i]) - mins[i].0))
                .collect::<Vec<f64>>()
                .into_iter()
                .fold(0.0f64, f64::max);
            residuals.push(res);
            v = v_new;
            policy = mins.into_iter().map(|m| m.1).collect();
            if !res.is_finite() {
                return Err(SolverError::NonFinite { what: "residual", t, node: 0 });
            }
            if res <= self.cfg.tol_policy * scale {
                let mut controls = Vec::with_capacity(n * d);
                policy.into_iter().for_each(|a| controls.extend(a));
                return Ok(StepResult {
                    values: v,
                    controls,
                    residuals,
                });
            }
        }
        Err(SolverError::PolicyIteration {
            t,
            sweeps: self.cfg.max_sweeps,
            residuals,
        })
    }
}

/// Output of one backward step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub values: Vec<f64>,
    /// Scheme policy, node-major, component-minor.
    pub controls: Vec<f64>,
    /// Nonlinear residual after each policy sweep (empty in explicit mode).
    pub residuals: Vec<f64>,
}

/// One backward step from the layer `layer + 1` (values `u_next`) to
/// `layer`.
pub fn step_backward(
    p: &HJBProblem,
    grid: &Grid,
    u_next: &[f64],
    layer: usize,
    radius: f64,
    cfg: &SchemeConfig,
) -> Result<StepResult, SolverError> {
    if layer >= grid.n_t() {
        return Err(GridError::OutOfRange {
            layer,
            node: Vec::new(),
        }
        .into());
    }
    if u_next.len() != grid.n_nodes() {
        return Err(GridError::DimensionMismatch {
            expected: grid.n_nodes(),
            got: u_next.len(),
        }
        .into());
    }
    if let Some(i) = u_next.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite {
            what: "u_next",
            t: grid.time(layer + 1),
            node: i,
        });
    }
    Scheme::new(p, grid, radius, cfg)?.step(layer, u_next)
}

/// Per-solve diagnostics.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SolveStats {
    pub total_sweeps: usize,
    pub max_sweeps: usize,
}

/// Backward sweep from u(T) = g over every layer. The returned field is the
/// feedback synthesized from the computed value (continuous minimizer at
/// the centred gradient).
pub fn solve(
    p: &HJBProblem,
    grid: &Grid,
    radius: f64,
    cfg: &SchemeConfig,
) -> Result<(ValueFunction, ControlField), SolverError> {
    solve_with_stats(p, grid, radius, cfg).map(|(u, f, _)| (u, f))
}

pub fn solve_with_stats(
    p: &HJBProblem,
    grid: &Grid,
    radius: f64,
    cfg: &SchemeConfig,
) -> Result<(ValueFunction, ControlField, SolveStats), SolverError> {
    let scheme = Scheme::new(p, grid, radius, cfg)?;
    let mut u = ValueFunction::zeros(grid.clone());
    let nt = grid.n_t();
    let terminal: Vec<f64> = (0..grid.n_nodes()).map(|i| p.g(&grid.node_coords(i))).collect();
    if let Some(i) = terminal.iter().position(|v| !v.is_finite()) {
        return Err(SolverError::NonFinite {
            what: "g",
            t: grid.horizon(),
            node: i,
        });
    }
    u.layer_mut(nt).copy_from_slice(&terminal);
    let mut stats = SolveStats::default();
    for layer in (0..nt).rev() {
        let next = u.layer(layer + 1).to_vec();
        let r = scheme.step(layer, &next)?;
        stats.total_sweeps += r.residuals.len();
        stats.max_sweeps = stats.max_sweeps.max(r.residuals.len());
        u.layer_mut(layer).copy_from_slice(&r.values);
    }
    let field = synthesize_feedback(p, &u, radius, cfg.m_alpha)?;
    Ok((u, field, stats))
}

/// Per-node minimizer of the Hamiltonian at the centred finite-difference
/// gradient of `u`.
pub fn synthesize_feedback(
    p: &HJBProblem,
    u: &ValueFunction,
    radius: f64,
    m_alpha: usize,
) -> Result<ControlField, SolverError> {
    let grid = u.grid().clone();
    u.check_finite()?;
    if grid.dim() != p.dim() {
        return Err(SolverError::DimensionMismatch {
            grid: grid.dim(),
            problem: p.dim(),
        });
    }
    let resolution = if p.family().has_quadratic_structure() {
        0.0
    } else {
        control_mesh_resolution(p.dim(), p.control_set().truncated_radius(radius), m_alpha)
    };
    let mut field = ControlField::zeros(grid.clone());
    field.resolution = resolution;
    for layer in 0..grid.n_layers() {
        let t = grid.time(layer);
        let vals = u.layer(layer);
        let ctrl: Vec<Vec<f64>> = (0..grid.n_nodes())
            .into_par_iter()
            .with_min_len(256)
            .map(|i| {
                let grad = layer_gradient(&grid, vals, i);
                hamiltonian_min(p, t, &grid.node_coords(i), &grad, radius, m_alpha)
                    .map(|(_, a)| a)
                    .map_err(|e| match e {
                        SolverError::NonFinite { what, t, .. } => SolverError::NonFinite { what, t, node: i },
                        e => e,
                    })
            })
            .collect::<Result<_, _>>()?;
        let dst = field.layer_mut(layer);
        for (chunk, a) in dst.chunks_mut(grid.dim()).zip(ctrl) {
            chunk.copy_from_slice(&a);
        }
    }
    Ok(field)
}

// ---------------------------------------------------------------------------
// Truncation escalation

#[derive(Clone, Debug, PartialEq)]
pub struct EscalationConfig {
    pub r0: f64,
    /// Absolute tolerance on the sup-norm change between stages.
    pub tol: f64,
    pub max_doublings: usize,
    pub core_fraction: f64,
}

impl EscalationConfig {
    pub fn new(r0: f64, tol: f64) -> Self {
        Self {
            r0,
            tol,
            max_doublings: 12,
            core_fraction: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationStage {
    pub stage: usize,
    pub radius: f64,
    pub sup_grad: f64,
    /// Sup-norm change from the previous stage (infinite at stage 0).
    pub delta_sup: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TruncationTrace {
    pub stages: Vec<TruncationStage>,
    pub final_radius: f64,
    pub converged: bool,
}

/// Solves with control radii R₀, 2R₀, 4R₀, … until two consecutive
/// solutions differ by at most `tol` in sup norm and the radius clears
/// L_A (1 + measured sup |Du|).
pub fn solve_with_truncation_escalation(
    p: &HJBProblem,
    grid: &Grid,
    esc: &EscalationConfig,
    cfg: &SchemeConfig,
) -> Result<(ValueFunction, ControlField, TruncationTrace), SolverError> {
    if !(esc.r0 > 0.0 && esc.r0.is_finite()) {
        return Err(SolverError::InvalidConfig {
            name: "R0_control",
            reason: format!("must be positive, got {}", esc.r0),
        });
    }
    if !(esc.tol > 0.0 && esc.tol.is_finite()) {
        return Err(SolverError::InvalidConfig {
            name: "tol_truncation",
            reason: format!("must be positive, got {}", esc.tol),
        });
    }
    if !(esc.core_fraction > 0.0 && esc.core_fraction <= 1.0) {
        return Err(SolverError::InvalidConfig {
            name: "core_fraction",
            reason: format!("must lie in (0, 1], got {}", esc.core_fraction),
        });
    }
    let mut trace = TruncationTrace::default();
    let mut prev: Option<ValueFunction> = None;
    for stage in 0..=esc.max_doublings {
        let radius = esc.r0 * 2f64.powi(stage as i32);
        let (u, field) = solve(p, grid, radius, cfg)?;
        let sup_grad = crate::estimates::sup_gradient(&u, esc.core_fraction);
        let delta_sup = match &prev {
            Some(v) => u.max_abs_diff(v)?,
            None => f64::INFINITY,
        };
        trace.stages.push(TruncationStage {
            stage,
            radius,
            sup_grad,
            delta_sup,
        });
        trace.final_radius = radius;
        let target = control_bound_radius(p.constants(), sup_grad)?;
        if delta_sup <= esc.tol && radius >= target * (1.0 - 1e-9) {
            trace.converged = true;
            return Ok((u, field, trace));
        }
        prev = Some(u);
    }
    Err(SolverError::Escalation { trace: Box::new(trace) })
}
