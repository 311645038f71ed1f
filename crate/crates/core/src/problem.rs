//! HJB problem instances: coefficient bundle, control set, declared
//! regularity constants, and a sampling audit of those constants.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use thiserror::Error;

use crate::grid::norm;
use crate::matrix_lemmas::SymmetricMatrix;

/// Writes b₁(t, x, α) into the output slice.
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync>;
/// Writes b₂(t, x) into the output slice.
pub type FieldFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// Writes σ(t, x) row-major into the output slice of length d².
pub type MatrixFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type ControlCostFn = Arc<dyn Fn(f64, &[f64], &[f64]) -> f64 + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
pub type TerminalFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: String, reason: String },
    #[error("non-finite evaluation of {coefficient} at t = {t}, x = {x:?}")]
    NonFinite {
        coefficient: &'static str,
        t: f64,
        x: Vec<f64>,
    },
    #[error("audit needs n_samples >= 2 and box_radius > 0")]
    BadAuditConfig,
}

fn invalid(name: &str, reason: impl Into<String>) -> ProblemError {
    ProblemError::InvalidParameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}

/// Time-dependent Lipschitz rate t ↦ L(t) together with ∫₀ᵀ L.
#[derive(Clone)]
pub struct LipschitzProfile {
    rate: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    integral: f64,
}

impl LipschitzProfile {
    pub fn new(rate: impl Fn(f64) -> f64 + Send + Sync + 'static, integral: f64) -> Self {
        Self {
            rate: Arc::new(rate),
            integral,
        }
    }

    pub fn constant(value: f64, horizon: f64) -> Self {
        Self::new(move |_| value, value * horizon)
    }

    pub fn at(&self, t: f64) -> f64 {
        (self.rate)(t)
    }

    pub fn integral(&self) -> f64 {
        self.integral
    }

    /// Composite Simpson quadrature of the rate over [0, T].
    pub fn quadrature(&self, horizon: f64, intervals: usize) -> f64 {
        let n = intervals.max(2) & !1;
        let h = horizon / n as f64;
        let mut s = self.at(0.0) + self.at(horizon);
        for k in 1..n {
            s += if k % 2 == 1 { 4.0 } else { 2.0 } * self.at(k as f64 * h);
        }
        s * h / 3.0
    }
}

impl fmt::Debug for LipschitzProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LipschitzProfile")
            .field("integral", &self.integral)
            .finish_non_exhaustive()
    }
}

/// Declared regularity, growth, coercivity and ellipticity constants.
#[derive(Clone, Debug)]
pub struct RegularityConstants {
    pub l_b: f64,
    pub l_f1: f64,
    pub c_f1: f64,
    pub c_f1_prime: f64,
    pub big_c_f1: f64,
    pub big_c_f1_prime: f64,
    pub l_f2: LipschitzProfile,
    pub l_sigma: f64,
    pub l_g: f64,
    pub eta_sigma: f64,
    pub l_a: f64,
}

impl RegularityConstants {
    pub fn validate(&self, horizon: f64) -> Result<(), ProblemError> {
        let named = [
            ("L_b", self.l_b),
            ("L_f1", self.l_f1),
            ("c_f1", self.c_f1),
            ("c_f1_prime", self.c_f1_prime),
            ("C_f1", self.big_c_f1),
            ("C_f1_prime", self.big_c_f1_prime),
            ("L_sigma", self.l_sigma),
            ("L_g", self.l_g),
            ("L_A", self.l_a),
            ("L_f2 integral", self.l_f2.integral()),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be finite and nonnegative, got {v}")));
            }
        }
        if !(self.eta_sigma.is_finite() && self.eta_sigma > 0.0) {
            return Err(invalid("eta_sigma", format!("must be positive, got {}", self.eta_sigma)));
        }
        if self.c_f1 > self.big_c_f1 {
            return Err(invalid("c_f1", "coercivity sandwich needs c_f1 <= C_f1"));
        }
        let q = self.l_f2.quadrature(horizon, 2000);
        if (q - self.l_f2.integral()).abs() > 1e-6 * (1.0 + q.abs()) {
            return Err(invalid(
                "L_f2 integral",
                format!("declared {} but quadrature gives {q}", self.l_f2.integral()),
            ));
        }
        Ok(())
    }
}

/// Admissible controls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlSet {
    FullSpace,
    Ball(f64),
}

impl ControlSet {
    /// Radius of A ∩ B(0, r).
    pub fn truncated_radius(&self, r: f64) -> f64 {
        match *self {
            ControlSet::FullSpace => r,
            ControlSet::Ball(rb) => rb.min(r),
        }
    }
}

/// Which coefficient family a problem belongs to; drives solver fast paths.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FamilyTag {
    /// b₁ = σᵀα, f₁ = ½|α|², controls in all of ℝᵈ.
    Quadratic,
    /// Same coefficients with a ball control set.
    CappedQuadratic,
    /// Caller-supplied coefficients; the Hamiltonian is minimized on a mesh.
    Custom,
}

impl FamilyTag {
    pub fn has_quadratic_structure(&self) -> bool {
        matches!(self, FamilyTag::Quadratic | FamilyTag::CappedQuadratic)
    }
}

/// The coefficient callables. All must be reentrant.
#[derive(Clone)]
pub struct Coefficients {
    pub b1: DriftFn,
    pub b2: FieldFn,
    pub sigma: MatrixFn,
    pub f1: ControlCostFn,
    pub f2: ScalarFn,
    pub g: TerminalFn,
}

#[derive(Clone)]
pub struct HJBProblem {
    dim: usize,
    horizon: f64,
    discount: f64,
    coefficients: Coefficients,
    control_set: ControlSet,
    constants: RegularityConstants,
    family: FamilyTag,
}

impl fmt::Debug for HJBProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HJBProblem")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("discount", &self.discount)
            .field("control_set", &self.control_set)
            .field("family", &self.family)
            .field("constants", &self.constants)
            .finish_non_exhaustive()
    }
}

impl HJBProblem {
    /// Problem with caller-supplied coefficients.
    pub fn custom(
        dim: usize,
        horizon: f64,
        discount: f64,
        coefficients: Coefficients,
        control_set: ControlSet,
        constants: RegularityConstants,
    ) -> Result<Self, ProblemError> {
        Self::build(dim, horizon, discount, coefficients, control_set, constants, FamilyTag::Custom)
    }

    fn build(
        dim: usize,
        horizon: f64,
        discount: f64,
        coefficients: Coefficients,
        control_set: ControlSet,
        constants: RegularityConstants,
        family: FamilyTag,
    ) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(invalid("dimension", "must be positive"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(invalid("horizon", format!("must be positive, got {horizon}")));
        }
        if !discount.is_finite() {
            return Err(invalid("discount", "must be finite"));
        }
        if let ControlSet::Ball(r) = control_set {
            if !(r.is_finite() && r > 0.0) {
                return Err(invalid("control_radius", format!("must be positive, got {r}")));
            }
        }
        constants.validate(horizon)?;
        Ok(Self {
            dim,
            horizon,
            discount,
            coefficients,
            control_set,
            constants,
            family,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn discount(&self) -> f64 {
        self.discount
    }
    pub fn control_set(&self) -> ControlSet {
        self.control_set
    }
    pub fn constants(&self) -> &RegularityConstants {
        &self.constants
    }
    pub fn family(&self) -> FamilyTag {
        self.family
    }
    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    /// Replaces the terminal cost, keeping everything else.
    pub fn with_terminal(&self, g: impl Fn(&[f64]) -> f64 + Send + Sync + 'static, l_g: f64) -> Self {
        let mut p = self.clone();
        p.coefficients.g = Arc::new(g);
        p.constants.l_g = l_g;
        p
    }

    /// Replaces the declared constants (no re-derivation).
    pub fn with_constants(&self, constants: RegularityConstants) -> Result<Self, ProblemError> {
        constants.validate(self.horizon)?;
        let mut p = self.clone();
        p.constants = constants;
        Ok(p)
    }

    pub fn b1(&self, t: f64, x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.coefficients.b1)(t, x, a, &mut out);
        out
    }
    pub fn b2(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        (self.coefficients.b2)(t, x, &mut out);
        out
    }
    pub fn drift(&self, t: f64, x: &[f64], a: &[f64]) -> Vec<f64> {
        let mut b = vec![0.0; self.dim];
        let mut scratch = vec![0.0; self.dim];
        self.drift_into(t, x, a, &mut b, &mut scratch);
        b
    }
    /// b₁ + b₂ into `out`, using `scratch` (both of length d).
    pub fn drift_into(&self, t: f64, x: &[f64], a: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        (self.coefficients.b1)(t, x, a, out);
        (self.coefficients.b2)(t, x, scratch);
        out.iter_mut().zip(scratch.iter()).for_each(|(u, v)| *u += v);
    }
    pub fn sigma(&self, t: f64, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim;
        let mut buf = vec![0.0; d * d];
        self.sigma_into(t, x, &mut buf);
        buf.chunks(d).map(|r| r.to_vec()).collect()
    }
    /// σ(t, x) row-major into `out` (length d²).
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.coefficients.sigma)(t, x, out)
    }
    /// σσᵀ(t, x).
    pub fn diffusion(&self, t: f64, x: &[f64]) -> SymmetricMatrix {
        let s = self.sigma(t, x);
        let d = self.dim;
        SymmetricMatrix::from_fn(d, |i, j| (0..d).map(|k| s[i][k] * s[j][k]).sum())
    }
    pub fn f1(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        (self.coefficients.f1)(t, x, a)
    }
    pub fn f2(&self, t: f64, x: &[f64]) -> f64 {
        (self.coefficients.f2)(t, x)
    }
    pub fn running_cost(&self, t: f64, x: &[f64], a: &[f64]) -> f64 {
        self.f1(t, x, a) + self.f2(t, x)
    }
    pub fn g(&self, x: &[f64]) -> f64 {
        (self.coefficients.g)(x)
    }
}

// ---------------------------------------------------------------------------
// Built-in parametric families

/// b₂(x) = clamp(M x + o), componentwise clamp at ±`clamp` when given.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AffineMapSpec {
    #[serde(default)]
    pub matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub offset: Option<Vec<f64>>,
    #[serde(default)]
    pub clamp: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    #[default]
    Constant,
    AffineClamped,
    SqrtGrowth,
}

/// Isotropic diffusion σ(x) = s(x) Id.
///
/// * `constant`: s = scale
/// * `affine-clamped`: s = clamp(scale + slope·x, floor, cap)
/// * `sqrt-growth`: s = scale √(1 + min(|x|, clamp_radius))
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SigmaSpec {
    #[serde(default = "one")]
    pub scale: f64,
    #[serde(default)]
    pub mode: SigmaMode,
    #[serde(default)]
    pub slope: Option<Vec<f64>>,
    #[serde(default)]
    pub floor: Option<f64>,
    #[serde(default)]
    pub cap: Option<f64>,
    #[serde(default)]
    pub clamp_radius: Option<f64>,
}

fn one() -> f64 {
    1.0
}

impl Default for SigmaSpec {
    fn default() -> Self {
        Self {
            scale: 1.0,
            mode: SigmaMode::Constant,
            slope: None,
            floor: None,
            cap: None,
            clamp_radius: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ScalarShape {
    #[default]
    Linear,
    Abs,
}

/// Time weight λ(t) with ∫₀ᵀ λ = T in every case.
#[derive(Clone, Copy, Debug, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TimeProfile {
    #[default]
    Constant,
    /// λ(t) = 2t/T
    Ramp,
    /// λ(t) = 2(1 − t/T)
    Front,
}

impl TimeProfile {
    pub fn weight(&self, t: f64, horizon: f64) -> f64 {
        match self {
            TimeProfile::Constant => 1.0,
            TimeProfile::Ramp => 2.0 * t / horizon,
            TimeProfile::Front => 2.0 * (1.0 - t / horizon),
        }
    }
}

/// Lipschitz scalar: offset + clamp(φ(slope·x), ±clamp), φ = id or |·|,
/// weighted in time by `profile` (used for f₂; ignored for g).
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScalarSpec {
    #[serde(default)]
    pub slope: Option<Vec<f64>>,
    #[serde(default)]
    pub offset: f64,
    #[serde(default)]
    pub shape: ScalarShape,
    #[serde(default)]
    pub clamp: Option<f64>,
    #[serde(default)]
    pub profile: TimeProfile,
}

/// Optional overrides of the derived constants.
#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ConstantsOverride {
    pub l_b: Option<f64>,
    pub l_f1: Option<f64>,
    pub c_f1: Option<f64>,
    pub c_f1_prime: Option<f64>,
    #[serde(rename = "C_f1")]
    pub big_c_f1: Option<f64>,
    #[serde(rename = "C_f1_prime")]
    pub big_c_f1_prime: Option<f64>,
    /// Constant-in-time L_f2.
    pub l_f2: Option<f64>,
    pub l_sigma: Option<f64>,
    pub l_g: Option<f64>,
    pub eta_sigma: Option<f64>,
    pub l_a: Option<f64>,
}

/// Parameters of the quadratic family b = σᵀα + b₂, f = ½|α|² + f₂.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub horizon: f64,
    pub discount: f64,
    pub b2: AffineMapSpec,
    pub sigma: SigmaSpec,
    pub f2: ScalarSpec,
    pub g: ScalarSpec,
    /// `Some(r)` gives the capped family with control set B(0, r).
    pub control_radius: Option<f64>,
    pub constants: ConstantsOverride,
}

impl QuadraticSpec {
    pub fn new(dim: usize, horizon: f64) -> Self {
        Self {
            dim,
            horizon,
            discount: 0.0,
            b2: AffineMapSpec::default(),
            sigma: SigmaSpec::default(),
            f2: ScalarSpec::default(),
            g: ScalarSpec::default(),
            control_radius: None,
            constants: ConstantsOverride::default(),
        }
    }

    /// g(x) = slope·x + offset.
    pub fn with_linear_terminal(mut self, slope: Vec<f64>, offset: f64) -> Self {
        self.g = ScalarSpec {
            slope: Some(slope),
            offset,
            ..ScalarSpec::default()
        };
        self
    }
}

fn check_finite(name: &str, vals: &[f64]) -> Result<(), ProblemError> {
    if vals.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(invalid(name, "non-finite parameter"))
    }
}

fn vector_or_zero(name: &str, v: &Option<Vec<f64>>, d: usize) -> Result<Vec<f64>, ProblemError> {
    match v {
        None => Ok(vec![0.0; d]),
        Some(v) if v.len() == d => {
            check_finite(name, v)?;
            Ok(v.clone())
        }
        Some(v) => Err(invalid(name, format!("expected length {d}, got {}", v.len()))),
    }
}

fn clamp_opt(name: &str, c: Option<f64>) -> Result<f64, ProblemError> {
    match c {
        None => Ok(f64::INFINITY),
        Some(c) if c.is_finite() && c > 0.0 => Ok(c),
        Some(c) => Err(invalid(name, format!("clamp must be positive and finite, got {c}"))),
    }
}

struct Scalar {
    slope: Vec<f64>,
    offset: f64,
    shape: ScalarShape,
    clamp: f64,
}

impl Scalar {
    fn from_spec(name: &str, s: &ScalarSpec, d: usize) -> Result<Self, ProblemError> {
        check_finite(name, &[s.offset])?;
        Ok(Self {
            slope: vector_or_zero(&format!("{name}.slope"), &s.slope, d)?,
            offset: s.offset,
            shape: s.shape,
            clamp: clamp_opt(&format!("{name}.clamp"), s.clamp)?,
        })
    }

    fn eval(&self, x: &[f64]) -> f64 {
        let lin: f64 = self.slope.iter().zip(x).map(|(a, b)| a * b).sum();
        let v = match self.shape {
            ScalarShape::Linear => lin,
            ScalarShape::Abs => lin.abs(),
        };
        self.offset + v.clamp(-self.clamp, self.clamp)
    }

    fn lipschitz(&self) -> f64 {
        norm(&self.slope)
    }
}

/// Builds a problem of the quadratic (or capped quadratic) family.
pub fn quadratic_problem(spec: &QuadraticSpec) -> Result<HJBProblem, ProblemError> {
    let d = spec.dim;
    if d == 0 {
        return Err(invalid("dimension", "must be positive"));
    }
    check_finite("horizon/discount", &[spec.horizon, spec.discount])?;
    let horizon = spec.horizon;

    // b2
    let m = match &spec.b2.matrix {
        None => vec![vec![0.0; d]; d],
        Some(m) => {
            if m.len() != d || m.iter().any(|r| r.len() != d) {
                return Err(invalid("b2.matrix", format!("expected {d}x{d}")));
            }
            for r in m {
                check_finite("b2.matrix", r)?;
            }
            m.clone()
        }
    };
    let o_vec = vector_or_zero("b2.offset", &spec.b2.offset, d)?;
    let b2_clamp = clamp_opt("b2.clamp", spec.b2.clamp)?;
    let m_norm = m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let o_norm = norm(&o_vec);

    // sigma
    let sg = &spec.sigma;
    check_finite("sigma.scale", &[sg.scale])?;
    let (s_fn, s_min, s_max, s_lip, l_sigma): (Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>, f64, f64, f64, f64) =
        match sg.mode {
            SigmaMode::Constant => {
                if sg.scale <= 0.0 {
                    return Err(invalid("sigma.scale", "ellipticity floor must be positive"));
                }
                let s = sg.scale;
                (Arc::new(move |_| s), s, s, 0.0, 0.0)
            }
            SigmaMode::AffineClamped => {
                let slope = vector_or_zero("sigma.slope", &sg.slope, d)?;
                let floor = sg.floor.unwrap_or(sg.scale);
                let cap = sg.cap.unwrap_or(f64::INFINITY);
                check_finite("sigma.floor", &[floor])?;
                if floor <= 0.0 {
                    return Err(invalid("sigma.floor", "ellipticity floor must be positive"));
                }
                if !(cap >= floor) || !cap.is_finite() {
                    return Err(invalid("sigma.cap", "affine-clamped sigma needs a finite cap >= floor"));
                }
                let lip = norm(&slope);
                let base = sg.scale;
                let sl = slope.clone();
                let s = move |x: &[f64]| {
                    let v = base + sl.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
                    v.clamp(floor, cap)
                };
                let holder = (d as f64).sqrt() * (lip * (cap - floor)).sqrt();
                (Arc::new(s), floor, cap, lip, holder)
            }
            SigmaMode::SqrtGrowth => {
                if sg.scale <= 0.0 {
                    return Err(invalid("sigma.scale", "ellipticity floor must be positive"));
                }
                let r = sg.clamp_radius.unwrap_or(16.0);
                if !(r.is_finite() && r > 0.0) {
                    return Err(invalid("sigma.clamp_radius", "must be positive"));
                }
                let scale = sg.scale;
                let s = move |x: &[f64]| scale * (1.0 + norm(x).min(r)).sqrt();
                (Arc::new(s), scale, scale * (1.0 + r).sqrt(), 0.5 * scale, (d as f64).sqrt() * scale)
            }
        };

    let f2s = Scalar::from_spec("f2", &spec.f2, d)?;
    let gs = Scalar::from_spec("g", &spec.g, d)?;
    let f2_level = f2s.lipschitz().max(f2s.offset.abs());
    let profile = spec.f2.profile;

    if let Some(r) = spec.control_radius {
        if !(r.is_finite() && r > 0.0) {
            return Err(invalid("control_radius", format!("must be positive, got {r}")));
        }
    }

    let ov = &spec.constants;
    let l_f2 = match ov.l_f2 {
        Some(v) => LipschitzProfile::constant(v, horizon),
        None => LipschitzProfile::new(move |t| f2_level * profile.weight(t, horizon), f2_level * horizon),
    };
    let constants = RegularityConstants {
        l_b: ov.l_b.unwrap_or(s_max.max(s_lip).max(m_norm).max(o_norm)),
        l_f1: ov.l_f1.unwrap_or(0.0),
        c_f1: ov.c_f1.unwrap_or(0.5),
        c_f1_prime: ov.c_f1_prime.unwrap_or(0.0),
        big_c_f1: ov.big_c_f1.unwrap_or(0.5),
        big_c_f1_prime: ov.big_c_f1_prime.unwrap_or(0.0),
        l_f2,
        l_sigma: ov.l_sigma.unwrap_or(l_sigma),
        l_g: ov.l_g.unwrap_or(gs.lipschitz()),
        eta_sigma: ov.eta_sigma.unwrap_or(s_min * s_min),
        l_a: ov.l_a.unwrap_or(s_max),
    };

    let s_b1 = s_fn.clone();
    let b1: DriftFn = Arc::new(move |_t, x, a, out| {
        let s = s_b1(x);
        out.iter_mut().zip(a).for_each(|(o, ai)| *o = s * ai);
    });
    let b2: FieldFn = Arc::new(move |_t, x, out| {
        for (i, o) in out.iter_mut().enumerate() {
            let v = o_vec[i] + m[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            *o = v.clamp(-b2_clamp, b2_clamp);
        }
    });
    let s_sig = s_fn;
    let sigma: MatrixFn = Arc::new(move |_t, x, out| {
        let s = s_sig(x);
        out.iter_mut().enumerate().for_each(|(k, o)| *o = if k % (d + 1) == 0 { s } else { 0.0 });
    });
    let f1: ControlCostFn = Arc::new(|_t, _x, a| 0.5 * a.iter().map(|v| v * v).sum::<f64>());
    let f2: ScalarFn = Arc::new(move |t, x| profile.weight(t, horizon) * f2s.eval(x));
    let g: TerminalFn = Arc::new(move |x| gs.eval(x));

    let (control_set, family) = match spec.control_radius {
        None => (ControlSet::FullSpace, FamilyTag::Quadratic),
        Some(r) => (ControlSet::Ball(r), FamilyTag::CappedQuadratic),
    };
    HJBProblem::build(
        d,
        horizon,
        spec.discount,
        Coefficients {
            b1,
            b2,
            sigma,
            f1,
            f2,
            g,
        },
        control_set,
        constants,
        family,
    )
}

/// Control radius L_A (1 + K) beyond which truncation cannot bind.
pub fn control_bound_radius(k: &RegularityConstants, grad_bound: f64) -> Result<f64, ProblemError> {
    if !(grad_bound.is_finite() && grad_bound >= 0.0) {
        return Err(invalid("grad_bound", format!("must be finite and nonnegative, got {grad_bound}")));
    }
    Ok(k.l_a * (1.0 + grad_bound))
}

// ---------------------------------------------------------------------------
// Sampling audit

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// Declared value bounds the estimate from above.
    Upper,
    /// Declared value bounds the estimate from below.
    Lower,
    /// Estimate must reproduce the declared value.
    Match,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionRecord {
    pub name: &'static str,
    pub kind: BoundKind,
    pub estimated: f64,
    pub declared: f64,
    /// Positive margin means room to spare.
    pub margin: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AssumptionReport {
    pub records: Vec<AssumptionRecord>,
    pub n_samples: usize,
    pub seed: u64,
    pub slack: f64,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.records.iter().all(|r| r.pass)
    }

    pub fn get(&self, name: &str) -> Option<&AssumptionRecord> {
        self.records.iter().find(|r| r.name == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AuditConfig {
    pub n_samples: usize,
    pub box_radius: f64,
    pub seed: u64,
    pub slack: f64,
}

impl AuditConfig {
    pub fn new(n_samples: usize, box_radius: f64, seed: u64) -> Self {
        Self {
            n_samples,
            box_radius,
            seed,
            slack: 0.05,
        }
    }
}

fn record(name: &'static str, kind: BoundKind, estimated: f64, declared: f64, slack: f64) -> AssumptionRecord {
    const ABS: f64 = 1e-12;
    let (margin, pass) = match kind {
        BoundKind::Upper => {
            let m = declared * (1.0 + slack) + ABS - estimated;
            (m, m >= 0.0)
        }
        BoundKind::Lower => {
            let m = estimated - declared * (1.0 - slack) + ABS;
            (m, m >= 0.0)
        }
        BoundKind::Match => {
            let m = 1e-6 * (1.0 + declared.abs()) - (estimated - declared).abs();
            (m, m >= 0.0)
        }
    };
    AssumptionRecord {
        name,
        kind,
        estimated,
        declared,
        margin,
        pass,
    }
}

fn finite_vec(coefficient: &'static str, t: f64, x: &[f64], v: &[f64]) -> Result<(), ProblemError> {
    if v.iter().all(|z| z.is_finite()) {
        Ok(())
    } else {
        Err(ProblemError::NonFinite {
            coefficient,
            t,
            x: x.to_vec(),
        })
    }
}

fn uniform_in_box(rng: &mut ChaCha8Rng, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.gen_range(-r..=r)).collect()
}

/// Estimates every declared constant by sampled supremum (or infimum)
/// quotients over random points in [−R, R]^d, random times in [0, T] and
/// random controls in the ball of radius R.
///
/// Each sample consumes a fixed number of draws, so a larger `n_samples`
/// with the same seed extends the same sample sequence.
pub fn validate_assumptions(p: &HJBProblem, cfg: &AuditConfig) -> Result<AssumptionReport, ProblemError> {
    if cfg.n_samples < 2 || !(cfg.box_radius > 0.0 && cfg.box_radius.is_finite()) {
        return Err(ProblemError::BadAuditConfig);
    }
    let d = p.dim();
    let r = cfg.box_radius;
    let k = p.constants();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut est_lb: f64 = 0.0;
    let mut est_lf1: f64 = 0.0;
    let mut est_c_low = f64::INFINITY;
    let mut est_c_high: f64 = 0.0;
    let mut est_cp_low: f64 = 0.0;
    let mut est_cp_high: f64 = 0.0;
    let mut est_lf2: f64 = 0.0;
    let mut est_lsigma: f64 = 0.0;
    let mut est_lg: f64 = 0.0;
    let mut est_eta = f64::INFINITY;
    let mut est_la: f64 = 0.0;
    let ctrl_r = p.control_set().truncated_radius(r);

    for _ in 0..cfg.n_samples {
        let t = rng.gen_range(0.0..=p.horizon());
        let x = uniform_in_box(&mut rng, d, r);
        let y = uniform_in_box(&mut rng, d, r);
        let mut a = uniform_in_box(&mut rng, d, ctrl_r);
        let na = norm(&a);
        if na > ctrl_r {
            a.iter_mut().for_each(|v| *v *= ctrl_r / na);
        }
        let grad = uniform_in_box(&mut rng, d, r);

        let dxy = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let na = norm(&a);

        let b1x = p.b1(t, &x, &a);
        finite_vec("b1", t, &x, &b1x)?;
        let b1y = p.b1(t, &y, &a);
        finite_vec("b1", t, &y, &b1y)?;
        let b2x = p.b2(t, &x);
        finite_vec("b2", t, &x, &b2x)?;
        let b2y = p.b2(t, &y);
        finite_vec("b2", t, &y, &b2y)?;
        let sx = p.sigma(t, &x);
        finite_vec("sigma", t, &x, &sx.concat())?;
        let sy = p.sigma(t, &y);
        finite_vec("sigma", t, &y, &sy.concat())?;
        let f1x = p.f1(t, &x, &a);
        let f1y = p.f1(t, &y, &a);
        finite_vec("f1", t, &x, &[f1x, f1y])?;
        let f2x = p.f2(t, &x);
        let f2y = p.f2(t, &y);
        finite_vec("f2", t, &x, &[f2x, f2y])?;
        let gx = p.g(&x);
        let gy = p.g(&y);
        finite_vec("g", t, &x, &[gx, gy])?;

        let diff = |u: &[f64], v: &[f64]| norm(&u.iter().zip(v).map(|(a, b)| a - b).collect::<Vec<_>>());
        est_lb = est_lb
            .max(norm(&b1x) / (1.0 + na))
            .max(norm(&b2x) / (1.0 + norm(&x)));
        if dxy > 0.0 {
            est_lb = est_lb
                .max(diff(&b1x, &b1y) / ((1.0 + na) * dxy))
                .max(diff(&b2x, &b2y) / dxy);
            est_lf1 = est_lf1.max((f1x - f1y).abs() / dxy);
            est_lsigma = est_lsigma.max(diff(&sx.concat(), &sy.concat()) / dxy.sqrt());
            est_lg = est_lg.max((gx - gy).abs() / dxy);
        }
        if na > 1e-3 {
            est_c_low = est_c_low.min((f1x + k.c_f1_prime) / (na * na));
            est_c_high = est_c_high.max((f1x - k.big_c_f1_prime) / (na * na));
        }
        est_cp_low = est_cp_low.max(k.c_f1 * na * na - f1x);
        est_cp_high = est_cp_high.max(f1x - k.big_c_f1 * na * na);

        let lf2 = k.l_f2.at(t);
        let mut q = (f2x.abs() / (1.0 + norm(&x))).max(f2y.abs() / (1.0 + norm(&y)));
        if dxy > 0.0 {
            q = q.max((f2x - f2y).abs() / dxy);
        }
        let ratio = if lf2 > 0.0 {
            q / lf2
        } else if q > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        est_lf2 = est_lf2.max(ratio);

        let dsx = p.diffusion(t, &x);
        est_eta = est_eta.min(dsx.min_eigenvalue());

        // Search well beyond the declared radius so an understated L_A shows.
        let search = 4.0 * k.l_a.max(1.0) * (1.0 + norm(&grad));
        let (_, amin) = crate::pde_solver::hamiltonian_min(p, t, &x, &grad, search, 16)
            .map_err(|_| ProblemError::NonFinite {
                coefficient: "hamiltonian",
                t,
                x: x.clone(),
            })?;
        est_la = est_la.max(norm(&amin) / (1.0 + norm(&grad)));
    }
    if !est_c_low.is_finite() {
        est_c_low = k.c_f1;
    }

    let s = cfg.slack;
    let records = vec![
        record("L_b", BoundKind::Upper, est_lb, k.l_b, s),
        record("L_f1", BoundKind::Upper, est_lf1, k.l_f1, s),
        record("c_f1", BoundKind::Lower, est_c_low, k.c_f1, s),
        record("c_f1_prime", BoundKind::Upper, est_cp_low, k.c_f1_prime, s),
        record("C_f1", BoundKind::Upper, est_c_high, k.big_c_f1, s),
        record("C_f1_prime", BoundKind::Upper, est_cp_high, k.big_c_f1_prime, s),
        record("L_f2/L_f2(t)", BoundKind::Upper, est_lf2, 1.0, s),
        record(
            "L_f2 integral",
            BoundKind::Match,
            k.l_f2.quadrature(p.horizon(), 2000),
            k.l_f2.integral(),
            s,
        ),
        record("L_sigma", BoundKind::Upper, est_lsigma, k.l_sigma, s),
        record("L_g", BoundKind::Upper, est_lg, k.l_g, s),
        record("eta_sigma", BoundKind::Lower, est_eta, k.eta_sigma, s),
        record("L_A", BoundKind::Upper, est_la, k.l_a, s),
    ];
    Ok(AssumptionReport {
        records,
        n_samples: cfg.n_samples,
        seed: cfg.seed,
        slack: s,
    })
}
