//! Trace and doubling-variables inequalities for symmetric matrices.
//!
//! Both inequalities are checked through eigenvalues computed with a cyclic
//! Jacobi iteration, which is more than adequate for the small dimensions
//! involved (d ≤ 8, block matrices up to 16 × 16).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Tolerance used for PSD / ordering preconditions and for the `holds` flags.
pub const LEMMA_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum MatrixError {
    #[error("matrix is not symmetric: entry ({i},{j}) = {a} but ({j},{i}) = {b}")]
    NotSymmetric { i: usize, j: usize, a: f64, b: f64 },
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("precondition A >= m Id violated: smallest eigenvalue of A is {eigenvalue}, m = {m}")]
    LowerBoundViolated { eigenvalue: f64, m: f64 },
    #[error("precondition B <= M Id violated: largest eigenvalue of B is {eigenvalue}, M = {big_m}")]
    UpperBoundViolated { eigenvalue: f64, big_m: f64 },
    #[error("block hypothesis violated: smallest eigenvalue of the block matrix is {eigenvalue}")]
    BlockHypothesisViolated { eigenvalue: f64 },
    #[error("invalid scalar parameter {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
}

/// Real symmetric matrix, one stored entry per unordered index pair.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    dim: usize,
    // upper triangle, row-major: (0,0),(0,1),..,(0,d-1),(1,1),...
    packed: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            packed: vec![0.0; dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_fn(dim, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn diag(values: &[f64]) -> Self {
        Self::from_fn(values.len(), |i, j| if i == j { values[i] } else { 0.0 })
    }

    /// Builds from `f(i, j)` evaluated on the upper triangle only.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let k = m.offset(i, j);
                m.packed[k] = f(i, j);
            }
        }
        m
    }

    /// Builds from dense rows; rejects inputs that are not exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, MatrixError> {
        let dim = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(MatrixError::DimensionMismatch(dim, row.len()));
            }
            for j in 0..i {
                if row[j] != rows[j][i] {
                    return Err(MatrixError::NotSymmetric {
                        i,
                        j,
                        a: row[j],
                        b: rows[j][i],
                    });
                }
            }
        }
        Ok(Self::from_fn(dim, |i, j| rows[i][j]))
    }

    /// Symmetrizes an arbitrary square dense matrix: (M + Mᵀ)/2.
    pub fn symmetrize(rows: &[Vec<f64>]) -> Self {
        Self::from_fn(rows.len(), |i, j| 0.5 * (rows[i][j] + rows[j][i]))
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.dim - i * (i + 1) / 2 + j
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.packed[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        let k = self.offset(i, j);
        self.packed[k] = v;
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| (0..self.dim).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Tr[AB] for symmetric A and B, i.e. the Frobenius inner product.
    pub fn trace_product(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(j, i);
            }
        }
        s
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.trace_product(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            dim: self.dim,
            packed: self.packed.iter().map(|v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            packed: self
                .packed
                .iter()
                .zip(&other.packed)
                .map(|(a, b)| a + b)
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scaled(-1.0))
    }

    /// Q · self · Qᵀ for a dense square Q.
    pub fn conjugate(&self, q: &[Vec<f64>]) -> Self {
        let n = self.dim;
        let a = self.to_dense();
        let mut qa = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..n {
                qa[i][j] = (0..n).map(|k| q[i][k] * a[k][j]).sum();
            }
        }
        Self::from_fn(n, |i, j| (0..n).map(|k| qa[i][k] * q[j][k]).sum())
    }

    /// Eigenvalues in ascending order (cyclic Jacobi rotations).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev = jacobi_eigenvalues(self.to_dense());
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues().first().copied().unwrap_or(0.0)
    }

    pub fn max_eigenvalue(&self) -> f64 {
        self.eigenvalues().last().copied().unwrap_or(0.0)
    }
}

/// Cyclic Jacobi iteration; stops once the off-diagonal mass falls below
/// 1e-12 × ‖A‖_F.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    if n == 0 {
        return Vec::new();
    }
    let norm: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let tol = 1e-12 * norm.max(f64::MIN_POSITIVE);
    const MAX_SWEEPS: usize = 100;

    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p][q] * a[p][q];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

/// Outcome of one inequality evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LemmaCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl LemmaCheck {
    fn new(lhs: f64, rhs: f64, scale: f64) -> Self {
        Self {
            lhs,
            rhs,
            holds: lhs <= rhs + LEMMA_TOL * scale,
        }
    }

    /// lhs/rhs, used to record tightness (reported, never asserted).
    pub fn ratio(&self) -> f64 {
        if self.rhs > 0.0 {
            self.lhs / self.rhs
        } else {
            f64::NAN
        }
    }
}

/// Tr[AB] ≤ m Tr[B] + M (Tr[A] − d m) for A ≥ m Id, B ≤ M Id, m, M ≥ 0.
pub fn trace_product_bound(
    a: &SymmetricMatrix,
    b: &SymmetricMatrix,
    m: f64,
    big_m: f64,
) -> Result<LemmaCheck, MatrixError> {
    if a.dim() != b.dim() {
        return Err(MatrixError::DimensionMismatch(a.dim(), b.dim()));
    }
    if !(m >= 0.0 && m.is_finite()) {
        return Err(MatrixError::InvalidParameter { name: "m", value: m });
    }
    if !(big_m >= 0.0 && big_m.is_finite()) {
        return Err(MatrixError::InvalidParameter {
            name: "M",
            value: big_m,
        });
    }
    let d = a.dim() as f64;
    let scale_a = 1.0 + a.frobenius_norm() + m;
    let scale_b = 1.0 + b.frobenius_norm() + big_m;

    let lam_a = a.min_eigenvalue();
    if lam_a < m - LEMMA_TOL * scale_a {
        return Err(MatrixError::LowerBoundViolated { eigenvalue: lam_a, m });
    }
    let lam_b = b.max_eigenvalue();
    if lam_b > big_m + LEMMA_TOL * scale_b {
        return Err(MatrixError::UpperBoundViolated {
            eigenvalue: lam_b,
            big_m,
        });
    }

    let lhs = a.trace_product(b);
    let rhs = m * b.trace() + big_m * (a.trace() - d * m);
    Ok(LemmaCheck::new(lhs, rhs, scale_a * scale_b * d))
}

/// The 2d × 2d matrix C[[A, −A], [−A, A]] + m Id − diag(X, Y); the
/// doubling hypothesis says it is positive semidefinite.
pub fn doubling_block(
    a: &SymmetricMatrix,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    c: f64,
    m: f64,
) -> SymmetricMatrix {
    let d = a.dim();
    SymmetricMatrix::from_fn(2 * d, |i, j| {
        let (bi, ii) = (i / d, i % d);
        let (bj, jj) = (j / d, j % d);
        let ca = c * a.get(ii, jj);
        let id = if i == j { m } else { 0.0 };
        match (bi, bj) {
            (0, 0) => ca + id - x.get(ii, jj),
            (1, 1) => ca + id - y.get(ii, jj),
            _ => -ca,
        }
    })
}

fn hypothesis_scale(a: &SymmetricMatrix, x: &SymmetricMatrix, y: &SymmetricMatrix, c: f64, m: f64) -> f64 {
    1.0 + c * a.frobenius_norm() + m + x.frobenius_norm() + y.frobenius_norm()
}

fn check_doubling_inputs(
    a: &SymmetricMatrix,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    c: f64,
    m: f64,
) -> Result<f64, MatrixError> {
    if a.dim() != x.dim() {
        return Err(MatrixError::DimensionMismatch(a.dim(), x.dim()));
    }
    if a.dim() != y.dim() {
        return Err(MatrixError::DimensionMismatch(a.dim(), y.dim()));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(MatrixError::InvalidParameter { name: "C", value: c });
    }
    if !(m > 0.0 && m.is_finite()) {
        return Err(MatrixError::InvalidParameter { name: "m", value: m });
    }
    let scale = hypothesis_scale(a, x, y, c, m);
    let lam = doubling_block(a, x, y, c, m).min_eigenvalue();
    if lam < -LEMMA_TOL * scale {
        return Err(MatrixError::BlockHypothesisViolated { eigenvalue: lam });
    }
    Ok(scale)
}

/// Doubling-variables bound in the stated form:
/// λmax(X − Y) ≤ √2 [2m + 2C + λmax(X + Y)].
///
/// This form is not implied by the block hypothesis in general (take A = 0,
/// C = m = 1, X = 1, Y = −5 in d = 1); see [`doubling_matrix_bound_directional`]
/// for the inequality that does follow from it.
pub fn doubling_matrix_bound(
    a: &SymmetricMatrix,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    c: f64,
    m: f64,
) -> Result<LemmaCheck, MatrixError> {
    let scale = check_doubling_inputs(a, x, y, c, m)?;
    let lhs = x.sub(y).max_eigenvalue();
    let rhs = std::f64::consts::SQRT_2 * (2.0 * m + 2.0 * c + x.add(y).max_eigenvalue());
    Ok(LemmaCheck::new(lhs, rhs, scale))
}

/// Direction-wise consequence of the block hypothesis: for every unit ξ,
/// ξᵀ(X−Y)ξ ≤ √2 [2m + 2C ξᵀAξ − ξᵀ(X+Y)ξ], hence
/// λmax(X − Y) ≤ √2 [2m + 2C λmax(A) − λmin(X + Y)].
pub fn doubling_matrix_bound_directional(
    a: &SymmetricMatrix,
    x: &SymmetricMatrix,
    y: &SymmetricMatrix,
    c: f64,
    m: f64,
) -> Result<LemmaCheck, MatrixError> {
    let scale = check_doubling_inputs(a, x, y, c, m)?;
    let lhs = x.sub(y).max_eigenvalue();
    let rhs = std::f64::consts::SQRT_2
        * (2.0 * m + 2.0 * c * a.max_eigenvalue() - x.add(y).min_eigenvalue());
    Ok(LemmaCheck::new(lhs, rhs, scale))
}

/// One generated instance of the doubling hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct DoublingInstance {
    pub a: SymmetricMatrix,
    pub x: SymmetricMatrix,
    pub y: SymmetricMatrix,
    pub c: f64,
    pub m: f64,
}

/// One generated instance for the trace-product bound.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceInstance {
    pub a: SymmetricMatrix,
    pub b: SymmetricMatrix,
    pub m: f64,
    pub big_m: f64,
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller, first variate only
    let u1: f64 = 1.0 - rng.gen::<f64>();
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn random_symmetric(d: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
    let dense: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| gaussian(rng)).collect())
        .collect();
    SymmetricMatrix::symmetrize(&dense)
}

/// G Gᵀ / d with Gaussian G.
pub fn random_psd(d: usize, rng: &mut ChaCha8Rng) -> SymmetricMatrix {
    let g: Vec<Vec<f64>> = (0..d)
        .map(|_| (0..d).map(|_| gaussian(rng)).collect())
        .collect();
    SymmetricMatrix::from_fn(d, |i, j| {
        (0..d).map(|k| g[i][k] * g[j][k]).sum::<f64>() / d as f64
    })
}

/// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
pub fn random_orthogonal(d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(d);
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| gaussian(rng)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= dot * ui);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Instances satisfying the doubling hypothesis by construction: draw A PSD
/// and symmetric X₀, Y₀, then shrink (X₀, Y₀) by the largest factor in [0, 1]
/// keeping the block matrix PSD (bisection against the smallest eigenvalue).
pub fn generate_hypothesis_instances(d: usize, n: usize, seed: u64) -> Vec<DoublingInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a = random_psd(d, &mut rng);
            let x0 = random_symmetric(d, &mut rng);
            let y0 = random_symmetric(d, &mut rng);
            let c = rng.gen_range(0.1..2.0);
            let m = rng.gen_range(0.1..2.0);
            let psd = |s: f64| {
                let (x, y) = (x0.scaled(s), y0.scaled(s));
                let scale = hypothesis_scale(&a, &x, &y, c, m);
                // stricter than the checker so the emitted instance always passes it
                doubling_block(&a, &x, &y, c, m).min_eigenvalue() >= -0.1 * LEMMA_TOL * scale
            };
            let s = if psd(1.0) {
                1.0
            } else {
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if psd(mid) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                lo
            };
            DoublingInstance {
                x: x0.scaled(s),
                y: y0.scaled(s),
                a,
                c,
                m,
            }
        })
        .collect()
}

/// A = m Id + PSD, B = M Id − PSD with m, M ≥ 0.
pub fn generate_trace_instances(d: usize, n: usize, seed: u64) -> Vec<TraceInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let m = rng.gen_range(0.0..3.0);
            let big_m = rng.gen_range(0.0..3.0);
            let a = SymmetricMatrix::identity(d).scaled(m).add(&random_psd(d, &mut rng));
            let b = SymmetricMatrix::identity(d)
                .scaled(big_m)
                .sub(&random_psd(d, &mut rng));
            TraceInstance { a, b, m, big_m }
        })
        .collect()
}

/// Summary of a property sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteSummary {
    pub trials: usize,
    pub violations: usize,
    pub max_ratio: f64,
}

/// Runs the trace-product bound over generated instances, d = 1..=max_dim.
pub fn trace_suite(max_dim: usize, trials: usize, seed: u64) -> SuiteSummary {
    let mut summary = SuiteSummary {
        trials: 0,
        violations: 0,
        max_ratio: f64::NEG_INFINITY,
    };
    for (k, d) in (1..=max_dim).enumerate() {
        let n = trials / max_dim + usize::from(k < trials % max_dim);
        for inst in generate_trace_instances(d, n, seed.wrapping_add(d as u64)) {
            summary.trials += 1;
            match trace_product_bound(&inst.a, &inst.b, inst.m, inst.big_m) {
                Ok(chk) => record(&mut summary, &chk),
                Err(_) => summary.violations += 1,
            }
        }
    }
    finish(summary)
}

fn record(summary: &mut SuiteSummary, chk: &LemmaCheck) {
    if !chk.holds {
        summary.violations += 1;
    }
    let r = chk.ratio();
    if r.is_finite() && r > summary.max_ratio {
        summary.max_ratio = r;
    }
}

// NaN when no instance had a positive right-hand side.
fn finish(mut summary: SuiteSummary) -> SuiteSummary {
    if summary.max_ratio == f64::NEG_INFINITY {
        summary.max_ratio = f64::NAN;
    }
    summary
}

/// Which form of the doubling bound to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DoublingForm {
    Stated,
    Directional,
}

/// Runs a doubling bound over generator output, d = 1..=max_dim.
pub fn doubling_suite(max_dim: usize, trials: usize, seed: u64, form: DoublingForm) -> SuiteSummary {
    let mut summary = SuiteSummary {
        trials: 0,
        violations: 0,
        max_ratio: f64::NEG_INFINITY,
    };
    for (k, d) in (1..=max_dim).enumerate() {
        let n = trials / max_dim + usize::from(k < trials % max_dim);
        for inst in generate_hypothesis_instances(d, n, seed.wrapping_add(d as u64)) {
            summary.trials += 1;
            let res = match form {
                DoublingForm::Stated => doubling_matrix_bound(&inst.a, &inst.x, &inst.y, inst.c, inst.m),
                DoublingForm::Directional => {
                    doubling_matrix_bound_directional(&inst.a, &inst.x, &inst.y, inst.c, inst.m)
                }
            };
            match res {
                Ok(chk) => record(&mut summary, &chk),
                Err(_) => summary.violations += 1,
            }
        }
    }
    finish(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn packed_storage_is_symmetric() {
        let mut m = SymmetricMatrix::zeros(3);
        m.set(2, 0, 4.0);
        assert_eq!(m.get(0, 2), 4.0);
        assert!(SymmetricMatrix::from_rows(&[vec![1.0, 2.0], vec![2.5, 1.0]]).is_err());
    }

    #[test]
    fn jacobi_matches_known_spectrum() {
        let m = SymmetricMatrix::from_rows(&[
            vec![2.0, -1.0, 0.0],
            vec![-1.0, 2.0, -1.0],
            vec![0.0, -1.0, 2.0],
        ])
        .unwrap();
        let ev = m.eigenvalues();
        let s2 = std::f64::consts::SQRT_2;
        for (got, want) in ev.iter().zip([2.0 - s2, 2.0, 2.0 + s2]) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn trace_bound_worked_examples() {
        let chk = trace_product_bound(
            &SymmetricMatrix::identity(2).scaled(2.0),
            &SymmetricMatrix::identity(2).scaled(-1.0),
            2.0,
            0.0,
        )
        .unwrap();
        assert_eq!((chk.lhs, chk.rhs), (-4.0, -4.0));
        assert!(chk.holds);

        let chk = trace_product_bound(
            &SymmetricMatrix::diag(&[1.0, 3.0]),
            &SymmetricMatrix::diag(&[-1.0, -2.0]),
            1.0,
            0.0,
        )
        .unwrap();
        assert_eq!((chk.lhs, chk.rhs), (-7.0, -3.0));
        assert!(chk.holds);

        let chk = trace_product_bound(
            &SymmetricMatrix::diag(&[2.0, 2.0]),
            &SymmetricMatrix::diag(&[1.0, -1.0]),
            2.0,
            1.0,
        )
        .unwrap();
        assert_eq!((chk.lhs, chk.rhs), (0.0, 0.0));
    }

    #[test]
    fn trace_bound_names_failed_precondition() {
        let err = trace_product_bound(
            &SymmetricMatrix::diag(&[0.5, 3.0]),
            &SymmetricMatrix::diag(&[-1.0, -1.0]),
            1.0,
            0.0,
        )
        .unwrap_err();
        assert!(matches!(err, MatrixError::LowerBoundViolated { eigenvalue, .. } if eigenvalue == 0.5));
        let err = trace_product_bound(
            &SymmetricMatrix::identity(2),
            &SymmetricMatrix::diag(&[2.0, 0.0]),
            1.0,
            1.0,
        )
        .unwrap_err();
        assert!(matches!(err, MatrixError::UpperBoundViolated { .. }));
    }

    #[test]
    fn doubling_worked_examples() {
        let a = SymmetricMatrix::identity(1);
        let half = SymmetricMatrix::diag(&[0.5]);
        let block = doubling_block(&a, &half, &half, 1.0, 1.0);
        let ev = block.eigenvalues();
        assert!((ev[0] - 0.5).abs() < 1e-14 && (ev[1] - 2.5).abs() < 1e-14);
        let chk = doubling_matrix_bound(&a, &half, &half, 1.0, 1.0).unwrap();
        assert_eq!(chk.lhs, 0.0);
        assert!((chk.rhs - 5.0 * std::f64::consts::SQRT_2).abs() < 1e-14);
        assert!(chk.holds);

        let z = SymmetricMatrix::zeros(3);
        let chk = doubling_matrix_bound(&SymmetricMatrix::identity(3), &z, &z, 1.0, 1.0).unwrap();
        assert!(chk.lhs.abs() < 1e-15 && chk.holds);
    }

    #[test]
    fn stated_doubling_form_has_counterexample() {
        let a = SymmetricMatrix::zeros(1);
        let x = SymmetricMatrix::diag(&[1.0]);
        let y = SymmetricMatrix::diag(&[-5.0]);
        // hypothesis holds (block = diag(0, 6))
        let chk = doubling_matrix_bound(&a, &x, &y, 1.0, 1.0).unwrap();
        assert!(!chk.holds);
        let chk = doubling_matrix_bound_directional(&a, &x, &y, 1.0, 1.0).unwrap();
        assert!(chk.holds);
    }

    #[test]
    fn hypothesis_violation_is_reported() {
        let a = SymmetricMatrix::identity(1);
        let big = SymmetricMatrix::diag(&[10.0]);
        let err = doubling_matrix_bound(&a, &big, &big, 1.0, 1.0).unwrap_err();
        assert!(matches!(err, MatrixError::BlockHypothesisViolated { eigenvalue } if eigenvalue < 0.0));
    }

    #[test]
    fn generator_is_deterministic_and_valid() {
        assert!(generate_hypothesis_instances(3, 0, 1).is_empty());
        let a = generate_hypothesis_instances(3, 25, 9);
        assert_eq!(a, generate_hypothesis_instances(3, 25, 9));
        for inst in &a {
            assert!(doubling_matrix_bound(&inst.a, &inst.x, &inst.y, inst.c, inst.m).is_ok());
        }
    }

    #[test]
    fn equality_case_a_multiple_of_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for d in 1..=5 {
            let m = 1.7;
            let b = random_psd(d, &mut rng).scaled(-1.0);
            let chk = trace_product_bound(&SymmetricMatrix::identity(d).scaled(m), &b, m, 0.0).unwrap();
            assert!((chk.lhs - chk.rhs).abs() <= 1e-12 * (1.0 + chk.lhs.abs()));
        }
    }
}
