//! Monte Carlo estimate of the cost functional under a feedback law, and
//! verification of a PDE solution against it.
//!
//! Path i draws from ChaCha8 seeded with `seed` on stream i (antithetic
//! pairs share a stream), with normals from the Box–Muller transform.
//! Per-path costs are reduced in path order by pairwise summation, so the
//! estimate does not depend on the worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{GridError, ValueFunction};
use crate::pde_solver::ControlField;
use crate::problem::HJBProblem;

#[derive(Debug, Error, PartialEq)]
pub enum McError {
    #[error("invalid simulation setting {name}: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
    #[error("non-finite state on path {path} at step {step}")]
    NonFinite { path: usize, step: usize },
    #[error("point (t = {t}, x = {x:?}) is outside the interior core")]
    OutsideCore { t: f64, x: Vec<f64> },
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulationConfig {
    pub n_paths: usize,
    pub dt_sim: f64,
    pub seed: u64,
    pub antithetic: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub t: f64,
    pub x: Vec<f64>,
    /// Paths that left the field's box at least once.
    pub exits: usize,
}

impl CostEstimate {
    pub fn exit_fraction(&self) -> f64 {
        self.exits as f64 / self.n_paths.max(1) as f64
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Policy<'a> {
    Field(&'a ControlField),
    Constant(&'a [f64]),
}

/// Pairwise (cascade) summation in index order.
pub fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let m = v.len() / 2;
    pairwise_sum(&v[..m]) + pairwise_sum(&v[m..])
}

struct Normals {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl Normals {
    fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1: f64 = 1.0 - self.rng.gen::<f64>();
        let u2: f64 = self.rng.gen::<f64>();
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * th.sin());
        r * th.cos()
    }
}

fn validate(p: &HJBProblem, policy: &Policy, t0: f64, x0: &[f64], cfg: &SimulationConfig) -> Result<(), McError> {
    let bad = |name, reason: String| Err(McError::InvalidConfig { name, reason });
    if cfg.n_paths < 2 {
        return bad("n_paths", format!("need at least 2, got {}", cfg.n_paths));
    }
    if cfg.antithetic && !cfg.n_paths.is_multiple_of(2) {
        return bad("n_paths", "antithetic sampling needs an even path count".into());
    }
    if !(cfg.dt_sim > 0.0 && cfg.dt_sim.is_finite()) {
        return bad("dt_sim", format!("must be positive, got {}", cfg.dt_sim));
    }
    if x0.len() != p.dim() {
        return Err(GridError::DimensionMismatch {
            expected: p.dim(),
            got: x0.len(),
        }
        .into());
    }
    if !(t0 >= 0.0 && t0 < p.horizon()) {
        return bad("t0", format!("must lie in [0, T), got {t0}"));
    }
    match policy {
        Policy::Field(f) => {
            if cfg.dt_sim > f.grid().dt() * (1.0 + 1e-12) {
                return bad("dt_sim", format!("{} is coarser than the grid step {}", cfg.dt_sim, f.grid().dt()));
            }
            f.grid().check_inside(t0, x0)?;
        }
        Policy::Constant(a) => {
            if a.len() != p.dim() {
                return bad("policy", format!("control of length {} in dimension {}", a.len(), p.dim()));
            }
        }
    }
    Ok(())
}

/// Euler–Maruyama estimate of E[∫ e^{c(s−t₀)} f ds + g(X_T)] from (t₀, x₀).
pub fn simulate_cost(
    p: &HJBProblem,
    policy: Policy,
    t0: f64,
    x0: &[f64],
    cfg: &SimulationConfig,
) -> Result<CostEstimate, McError> {
    validate(p, &policy, t0, x0, cfg)?;
    let span = p.horizon() - t0;
    let n_steps = ((span / cfg.dt_sim) - 1e-9).ceil().max(1.0) as usize;
    let step = span / n_steps as f64;
    let sq = step.sqrt();
    let d = p.dim();
    let c = p.discount();
    let bounds: (Vec<f64>, Vec<f64>) = match policy {
        Policy::Field(f) => {
            let g = f.grid();
            (
                g.center().iter().map(|c| c - g.half_width()).collect(),
                g.center().iter().map(|c| c + g.half_width()).collect(),
            )
        }
        Policy::Constant(_) => (vec![f64::NEG_INFINITY; d], vec![f64::INFINITY; d]),
    };
    let bounds = (&bounds.0, &bounds.1);

    let run = |path: usize| -> Result<(f64, bool), McError> {
        let (stream, sign) = if cfg.antithetic {
            ((path / 2) as u64, if path.is_multiple_of(2) { 1.0 } else { -1.0 })
        } else {
            (path as u64, 1.0)
        };
        let mut normals = Normals::new(cfg.seed, stream);
        let mut x = x0.to_vec();
        let mut xc = vec![0.0; d];
        let mut a = vec![0.0; d];
        let mut b = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        let mut sig = vec![0.0; d * d];
        let mut xi = vec![0.0; d];
        let mut cost = 0.0;
        let mut exited = false;
        let (lo, hi) = bounds;
        if let Policy::Constant(c) = policy {
            a.copy_from_slice(c);
        }
        for k in 0..n_steps {
            let t = t0 + k as f64 * step;
            if let Policy::Field(f) = policy {
                for i in 0..d {
                    if x[i] < lo[i] || x[i] > hi[i] {
                        exited = true;
                    }
                    xc[i] = x[i].clamp(lo[i], hi[i]);
                }
                f.interpolate_into(t, &xc, &mut a);
            }
            p.drift_into(t, &x, &a, &mut b, &mut scratch);
            p.sigma_into(t, &x, &mut sig);
            let disc = if c == 0.0 { 1.0 } else { (c * (t - t0)).exp() };
            cost += disc * p.running_cost(t, &x, &a) * step;
            xi.iter_mut().for_each(|z| *z = sign * normals.next());
            for i in 0..d {
                let noise: f64 = (0..d).map(|j| sig[i * d + j] * xi[j]).sum();
                x[i] += b[i] * step + noise * sq;
            }
            if !(cost.is_finite() && x.iter().all(|v| v.is_finite())) {
                return Err(McError::NonFinite { path, step: k });
            }
        }
        let total = cost + p.g(&x);
        if !total.is_finite() {
            return Err(McError::NonFinite { path, step: n_steps });
        }
        Ok((total, exited))
    };

    let results: Vec<(f64, bool)> = (0..cfg.n_paths)
        .into_par_iter()
        .with_min_len(64)
        .map(run)
        .collect::<Result<_, _>>()?;
    let exits = results.iter().filter(|r| r.1).count();
    // Antithetic pairs are averaged first; the pair means are independent.
    let samples: Vec<f64> = if cfg.antithetic {
        results.chunks(2).map(|w| 0.5 * (w[0].0 + w[1].0)).collect()
    } else {
        results.iter().map(|r| r.0).collect()
    };
    let m = samples.len() as f64;
    let mean = pairwise_sum(&samples) / m;
    let sq_dev: Vec<f64> = samples.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = pairwise_sum(&sq_dev) / (m - 1.0);
    Ok(CostEstimate {
        mean,
        stderr: (var / m).sqrt(),
        n_paths: cfg.n_paths,
        t: t0,
        x: x0.to_vec(),
        exits,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyConfig {
    /// Discretization allowance added to the statistical band.
    pub allowance: f64,
    /// Width of the statistical band in standard errors.
    pub sigma_band: f64,
    pub baselines: Vec<Vec<f64>>,
    pub core_fraction: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            allowance: 0.0,
            sigma_band: 3.0,
            baselines: Vec::new(),
            core_fraction: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCheck {
    pub t: f64,
    pub x: Vec<f64>,
    pub u_pde: f64,
    pub estimate: CostEstimate,
    pub gap: f64,
    pub band: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineCheck {
    pub t: f64,
    pub x: Vec<f64>,
    pub control: Vec<f64>,
    pub estimate: CostEstimate,
    /// Baseline cost minus synthesized-feedback cost.
    pub excess: f64,
    pub combined_stderr: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub points: Vec<PointCheck>,
    pub baselines: Vec<BaselineCheck>,
}

impl VerificationReport {
    pub fn all_pass(&self) -> bool {
        self.points.iter().all(|p| p.pass) && self.baselines.iter().all(|b| b.pass)
    }
}

/// Compares Monte Carlo costs under the synthesized field with the PDE
/// value at each point, and checks the field beats each baseline.
pub fn verify_value(
    p: &HJBProblem,
    u: &ValueFunction,
    field: &ControlField,
    points: &[(f64, Vec<f64>)],
    sim: &SimulationConfig,
    cfg: &VerifyConfig,
) -> Result<VerificationReport, McError> {
    if !(cfg.allowance >= 0.0 && cfg.sigma_band >= 0.0) {
        return Err(McError::InvalidConfig {
            name: "allowance",
            reason: "allowance and sigma_band must be nonnegative".into(),
        });
    }
    let g = u.grid();
    let mut report = VerificationReport {
        points: Vec::new(),
        baselines: Vec::new(),
    };
    for (t, x) in points {
        g.check_inside(*t, x)?;
        let r = cfg.core_fraction * g.half_width() * (1.0 + 1e-12);
        if x.iter().zip(g.center()).any(|(xi, ci)| (xi - ci).abs() > r) {
            return Err(McError::OutsideCore { t: *t, x: x.clone() });
        }
        let u_pde = u.interpolate(*t, x)?;
        let est = simulate_cost(p, Policy::Field(field), *t, x, sim)?;
        let gap = (est.mean - u_pde).abs();
        let band = cfg.sigma_band * est.stderr + cfg.allowance;
        for b in &cfg.baselines {
            let be = simulate_cost(p, Policy::Constant(b), *t, x, sim)?;
            let cse = (be.stderr.powi(2) + est.stderr.powi(2)).sqrt();
            let excess = be.mean - est.mean;
            report.baselines.push(BaselineCheck {
                t: *t,
                x: x.clone(),
                control: b.clone(),
                excess,
                combined_stderr: cse,
                pass: excess >= -cfg.sigma_band * cse,
                estimate: be,
            });
        }
        report.points.push(PointCheck {
            t: *t,
            x: x.clone(),
            u_pde,
            gap,
            band,
            pass: gap <= band,
            estimate: est,
        });
    }
    Ok(report)
}

/// Largest exit fraction over the verified points.
pub fn max_exit_fraction(r: &VerificationReport) -> f64 {
    r.points.iter().map(|p| p.estimate.exit_fraction()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{quadratic_problem, QuadraticSpec};

    fn closed_form() -> HJBProblem {
        quadratic_problem(&QuadraticSpec::new(1, 1.0).with_linear_terminal(vec![1.0], 0.0)).unwrap()
    }

    fn sim(n: usize, antithetic: bool) -> SimulationConfig {
        SimulationConfig {
            n_paths: n,
            dt_sim: 1.0 / 64.0,
            seed: 42,
            antithetic,
        }
    }

    #[test]
    fn zero_problem_is_exact() {
        let p = quadratic_problem(&QuadraticSpec::new(1, 1.0)).unwrap();
        let e = simulate_cost(&p, Policy::Constant(&[0.0]), 0.0, &[0.3], &sim(100, false)).unwrap();
        assert_eq!((e.mean, e.stderr), (0.0, 0.0));
    }

    #[test]
    fn constant_policies_match_expectations() {
        let p = closed_form();
        for (a, exact) in [(-1.0, -0.5), (0.0, 0.0), (1.0, 1.5)] {
            let e = simulate_cost(&p, Policy::Constant(&[a]), 0.0, &[0.0], &sim(20_000, false)).unwrap();
            assert!((e.mean - exact).abs() <= 3.0 * e.stderr + 1e-12, "{a}: {e:?}");
        }
    }

    #[test]
    fn antithetic_kills_linear_variance() {
        let p = closed_form();
        let plain = simulate_cost(&p, Policy::Constant(&[-1.0]), 0.0, &[0.0], &sim(2000, false)).unwrap();
        let anti = simulate_cost(&p, Policy::Constant(&[-1.0]), 0.0, &[0.0], &sim(2000, true)).unwrap();
        assert!(anti.stderr <= plain.stderr);
        assert!(anti.stderr < 1e-12 && (anti.mean + 0.5).abs() < 1e-12);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 500_500.0);
    }

    #[test]
    fn rejects_coarse_step_for_fields() {
        let p = closed_form();
        let g = crate::grid::Grid::new(vec![0.0], 4.0, 9, 8, 1.0).unwrap();
        let f = ControlField::zeros(g);
        let mut s = sim(10, false);
        s.dt_sim = 0.5;
        assert!(simulate_cost(&p, Policy::Field(&f), 0.0, &[0.0], &s).is_err());
    }
}
