//! Experiment files: strict TOML, one section per module.

use std::path::{Path, PathBuf};

use hjb_core::estimates::CertificateConfig;
use hjb_core::mc_verify::{SimulationConfig, VerifyConfig};
use hjb_core::pde_solver::{BoundaryClosure, TimeStepping};
use hjb_core::problem::{AffineMapSpec, ConstantsOverride, ScalarSpec, SigmaMode, SigmaSpec};
use hjb_core::{quadratic_problem, EscalationConfig, Grid, HJBProblem, QuadraticSpec, SchemeConfig};
use serde::Deserialize;

use crate::CliError;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub solver: SolverSection,
    #[serde(default)]
    pub certificates: CertificateSection,
    #[serde(default)]
    pub mc: Option<McSection>,
    #[serde(default)]
    pub verify: VerifySection,
    #[serde(default)]
    pub lemmas: LemmaSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// b = σᵀα + b₂, f = ½|α|² + f₂, α unconstrained.
    Quadratic,
    /// Same coefficients, α restricted to the ball of radius `control_radius`.
    CappedQuadratic,
    /// Quadratic with σ = scale √(1 + |x|) Id, clamped at `sigma.clamp_radius`.
    SqrtSigma,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Quadratic => "quadratic",
            Family::CappedQuadratic => "capped-quadratic",
            Family::SqrtSigma => "sqrt-sigma",
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub family: Family,
    pub dimension: usize,
    pub horizon: f64,
    #[serde(default)]
    pub discount: f64,
    #[serde(default)]
    pub control_radius: Option<f64>,
    #[serde(default)]
    pub b2: AffineMapSpec,
    #[serde(default)]
    pub sigma: SigmaSpec,
    #[serde(default)]
    pub f2: ScalarSpec,
    #[serde(default)]
    pub g: ScalarSpec,
    #[serde(default)]
    pub constants: ConstantsOverride,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(rename = "R_x")]
    pub r_x: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// Refinement levels in the ladder; each level runs at R_x and 2 R_x.
    #[serde(default = "default_ladder_length")]
    pub ladder_length: usize,
    #[serde(default)]
    pub center: Option<Vec<f64>>,
}

fn default_ladder_length() -> usize {
    2
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub mode: TimeStepping,
    pub m_alpha: usize,
    pub tol_policy: f64,
    pub max_sweeps: usize,
    pub tol_linear: f64,
    pub max_linear_iters: usize,
    pub closure: BoundaryClosure,
    #[serde(rename = "R0_control")]
    pub r0_control: f64,
    /// Relative to max(1, max |g| on the grid).
    pub tol_truncation: f64,
    pub max_doublings: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SchemeConfig::default();
        Self {
            mode: s.mode,
            m_alpha: s.m_alpha,
            tol_policy: s.tol_policy,
            max_sweeps: s.max_sweeps,
            tol_linear: s.tol_linear,
            max_linear_iters: s.max_linear_iters,
            closure: s.closure,
            r0_control: 0.25,
            tol_truncation: 1e-6,
            max_doublings: 12,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CertificateSection {
    pub core_fraction: f64,
    pub n_pairs: usize,
    pub seed: u64,
    pub allowance: f64,
    pub max_sup_grad: Option<f64>,
    pub max_lipschitz: Option<f64>,
    pub max_growth: Option<f64>,
    pub k_tilde: Option<f64>,
    pub max_m_tilde: f64,
    /// Largest relative spread of sup |Du| across ladder rungs.
    pub ladder_spread: f64,
}

impl Default for CertificateSection {
    fn default() -> Self {
        let c = CertificateConfig::default();
        Self {
            core_fraction: c.core_fraction,
            n_pairs: c.n_pairs,
            seed: c.seed,
            allowance: c.allowance,
            max_sup_grad: None,
            max_lipschitz: None,
            max_growth: None,
            k_tilde: None,
            max_m_tilde: c.max_m_tilde,
            ladder_spread: 0.05,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub n_paths: usize,
    /// Defaults to the grid time step.
    #[serde(default)]
    pub dt_sim: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub antithetic: bool,
    #[serde(default)]
    pub baselines: Vec<Vec<f64>>,
    /// Defaults to 2 (h + dt).
    #[serde(default)]
    pub allowance: Option<f64>,
    #[serde(default = "three")]
    pub sigma_band: f64,
    /// Each entry is [t, x_1, .., x_d].
    pub points: Vec<Vec<f64>>,
}

fn three() -> f64 {
    3.0
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifySection {
    pub cross_check: bool,
    /// Defaults to 3 (h + dt).
    pub cross_check_allowance: Option<f64>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LemmaSection {
    pub trials: usize,
    pub max_dim_trace: usize,
    pub max_dim_doubling: usize,
    pub seed: u64,
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self {
            trials: 10_000,
            max_dim_trace: 8,
            max_dim_doubling: 6,
            seed: 0,
        }
    }
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{key}: {reason}"))
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Overrides every seed in the file.
    pub fn set_seed(&mut self, seed: u64) {
        self.certificates.seed = seed;
        self.lemmas.seed = seed;
        if let Some(mc) = &mut self.mc {
            mc.seed = seed;
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let p = &self.problem;
        let gr = &self.grid;
        if p.dimension == 0 {
            return Err(bad("problem.dimension", "must be positive"));
        }
        if !(p.horizon > 0.0 && p.horizon.is_finite()) {
            return Err(bad("problem.horizon", format!("must be positive, got {}", p.horizon)));
        }
        match (p.family, p.control_radius) {
            (Family::CappedQuadratic, None) => {
                return Err(bad("problem.control_radius", "required by the capped-quadratic family"))
            }
            (Family::CappedQuadratic, Some(r)) if !(r > 0.0 && r.is_finite()) => {
                return Err(bad("problem.control_radius", format!("must be positive, got {r}")))
            }
            (Family::Quadratic | Family::SqrtSigma, Some(_)) => {
                return Err(bad(
                    "problem.control_radius",
                    format!("not allowed for the {} family", p.family.name()),
                ))
            }
            _ => {}
        }
        if p.family == Family::SqrtSigma && p.sigma.mode == SigmaMode::AffineClamped {
            return Err(bad("problem.sigma.mode", "the sqrt-sigma family fixes the sqrt-growth mode"));
        }
        if !(gr.r_x > 0.0 && gr.r_x.is_finite()) {
            return Err(bad("grid.R_x", format!("must be positive, got {}", gr.r_x)));
        }
        if gr.n_x < 3 {
            return Err(bad("grid.n_x", format!("must be at least 3, got {}", gr.n_x)));
        }
        if gr.n_t == 0 {
            return Err(bad("grid.n_t", "must be positive"));
        }
        if let Some(c) = &gr.center {
            if c.len() != p.dimension {
                return Err(bad(
                    "grid.center",
                    format!("expected {} coordinates, got {}", p.dimension, c.len()),
                ));
            }
        }
        let s = &self.solver;
        if !(s.r0_control > 0.0 && s.r0_control.is_finite()) {
            return Err(bad("solver.R0_control", format!("must be positive, got {}", s.r0_control)));
        }
        if !(s.tol_truncation > 0.0 && s.tol_truncation.is_finite()) {
            return Err(bad("solver.tol_truncation", "must be positive"));
        }
        self.scheme().validate().map_err(|e| bad("solver", e))?;
        self.certificate_config().validate().map_err(|e| bad("certificates", e))?;
        let c = &self.certificates;
        if !(c.ladder_spread >= 0.0 && c.ladder_spread.is_finite()) {
            return Err(bad("certificates.ladder_spread", "must be finite and nonnegative"));
        }
        if let Some(mc) = &self.mc {
            if mc.n_paths < 2 {
                return Err(bad("mc.n_paths", "need at least two paths"));
            }
            if let Some(dt) = mc.dt_sim {
                if !(dt > 0.0 && dt.is_finite()) {
                    return Err(bad("mc.dt_sim", format!("must be positive, got {dt}")));
                }
            }
            if let Some(a) = mc.allowance {
                if !(a >= 0.0 && a.is_finite()) {
                    return Err(bad("mc.allowance", "must be finite and nonnegative"));
                }
            }
            if !(mc.sigma_band >= 0.0 && mc.sigma_band.is_finite()) {
                return Err(bad("mc.sigma_band", "must be finite and nonnegative"));
            }
            if mc.points.is_empty() {
                return Err(bad("mc.points", "at least one point is required"));
            }
            for (k, pt) in mc.points.iter().enumerate() {
                if pt.len() != p.dimension + 1 {
                    return Err(bad(
                        &format!("mc.points[{k}]"),
                        format!("expected [t, x_1..x_{}], got {} numbers", p.dimension, pt.len()),
                    ));
                }
            }
            for (k, b) in mc.baselines.iter().enumerate() {
                if b.len() != p.dimension {
                    return Err(bad(
                        &format!("mc.baselines[{k}]"),
                        format!("expected {} components, got {}", p.dimension, b.len()),
                    ));
                }
            }
        }
        if self.verify.cross_check {
            if p.family == Family::CappedQuadratic {
                return Err(bad(
                    "verify.cross_check",
                    "the Cole-Hopf route needs an unconstrained quadratic family",
                ));
            }
            if p.discount != 0.0 {
                return Err(bad("verify.cross_check", "the Cole-Hopf route needs discount = 0"));
            }
        }
        if let Some(a) = self.verify.cross_check_allowance {
            if !(a >= 0.0 && a.is_finite()) {
                return Err(bad("verify.cross_check_allowance", "must be finite and nonnegative"));
            }
        }
        let l = &self.lemmas;
        if l.trials == 0 || l.max_dim_trace == 0 || l.max_dim_doubling == 0 {
            return Err(bad("lemmas", "trials and dimensions must be positive"));
        }
        // Builds the problem once so coefficient errors surface here.
        self.problem()?;
        Ok(())
    }

    pub fn quadratic_spec(&self) -> QuadraticSpec {
        let p = &self.problem;
        let mut sigma = p.sigma.clone();
        if p.family == Family::SqrtSigma {
            sigma.mode = SigmaMode::SqrtGrowth;
        }
        QuadraticSpec {
            dim: p.dimension,
            horizon: p.horizon,
            discount: p.discount,
            b2: p.b2.clone(),
            sigma,
            f2: p.f2.clone(),
            g: p.g.clone(),
            control_radius: p.control_radius,
            constants: p.constants.clone(),
        }
    }

    pub fn problem(&self) -> Result<HJBProblem, CliError> {
        quadratic_problem(&self.quadratic_spec()).map_err(|e| bad("problem", e))
    }

    pub fn grid(&self) -> Result<Grid, CliError> {
        self.grid_at(self.grid.r_x, self.grid.n_x, self.grid.n_t)
    }

    pub fn grid_at(&self, r_x: f64, n_x: usize, n_t: usize) -> Result<Grid, CliError> {
        let center = self.grid.center.clone().unwrap_or_else(|| vec![0.0; self.problem.dimension]);
        Grid::new(center, r_x, n_x, n_t, self.problem.horizon).map_err(|e| bad("grid", e))
    }

    pub fn scheme(&self) -> SchemeConfig {
        let s = &self.solver;
        SchemeConfig {
            mode: s.mode,
            m_alpha: s.m_alpha,
            tol_policy: s.tol_policy,
            max_sweeps: s.max_sweeps,
            tol_linear: s.tol_linear,
            max_linear_iters: s.max_linear_iters,
            closure: s.closure,
        }
    }

    /// Escalation settings; the tolerance is scaled by max(1, max |g|) on the grid.
    pub fn escalation(&self, p: &HJBProblem, grid: &Grid) -> EscalationConfig {
        let scale = (0..grid.n_nodes())
            .map(|i| p.g(&grid.node_coords(i)).abs())
            .fold(1.0, f64::max);
        EscalationConfig {
            r0: self.solver.r0_control,
            tol: self.solver.tol_truncation * scale,
            max_doublings: self.solver.max_doublings,
            core_fraction: self.certificates.core_fraction,
        }
    }

    pub fn certificate_config(&self) -> CertificateConfig {
        let c = &self.certificates;
        CertificateConfig {
            core_fraction: c.core_fraction,
            n_pairs: c.n_pairs,
            seed: c.seed,
            allowance: c.allowance,
            max_sup_grad: c.max_sup_grad,
            max_lipschitz: c.max_lipschitz,
            max_growth: c.max_growth,
            k_tilde: c.k_tilde,
            max_m_tilde: c.max_m_tilde,
        }
    }

    pub fn mc_section(&self) -> Result<&McSection, CliError> {
        self.mc.as_ref().ok_or_else(|| bad("mc", "section required by this command"))
    }

    pub fn simulation(&self, grid: &Grid) -> Result<SimulationConfig, CliError> {
        let mc = self.mc_section()?;
        Ok(SimulationConfig {
            n_paths: mc.n_paths,
            dt_sim: mc.dt_sim.unwrap_or(grid.dt()),
            seed: mc.seed,
            antithetic: mc.antithetic,
        })
    }

    pub fn verify_config(&self, grid: &Grid) -> Result<VerifyConfig, CliError> {
        let mc = self.mc_section()?;
        Ok(VerifyConfig {
            allowance: mc.allowance.unwrap_or(2.0 * (grid.h() + grid.dt())),
            sigma_band: mc.sigma_band,
            baselines: mc.baselines.clone(),
            core_fraction: self.certificates.core_fraction,
        })
    }

    pub fn points(&self) -> Result<Vec<(f64, Vec<f64>)>, CliError> {
        Ok(self
            .mc_section()?
            .points
            .iter()
            .map(|p| (p[0], p[1..].to_vec()))
            .collect())
    }
}
