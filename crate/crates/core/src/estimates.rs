//! Measured certificates on a computed value function: gradient bound,
//! Lipschitz quotient, deteriorated pair, growth envelope, control margin.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{layer_gradient, norm, Grid, ValueFunction};
use crate::pde_solver::ControlField;

/// Above this many core nodes per layer, pairs are sampled instead of
/// enumerated.
pub const ALL_PAIRS_LIMIT: usize = 20_000;

#[derive(Debug, Error, PartialEq)]
pub enum EstimateError {
    #[error("control field and value function live on different grids")]
    GridMismatch,
    #[error("invalid certificate setting {name}: {reason}")]
    InvalidConfig { name: &'static str, reason: String },
}

fn max_fold(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

/// max over core nodes and all layers of |Du| (finite differences).
pub fn sup_gradient(u: &ValueFunction, core_fraction: f64) -> f64 {
    let g = u.grid();
    let core = g.core_nodes(core_fraction);
    let per_layer: Vec<f64> = (0..g.n_layers())
        .into_par_iter()
        .map(|l| {
            let vals = u.layer(l);
            max_fold(core.iter().map(|&i| norm(&layer_gradient(g, vals, i))))
        })
        .collect();
    max_fold(per_layer)
}

/// Which same-time node pairs the secant certificates scan.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSampler {
    pub n_pairs: usize,
    pub seed: u64,
    pub core_fraction: f64,
}

impl PairSampler {
    pub fn new(n_pairs: usize, seed: u64, core_fraction: f64) -> Self {
        Self {
            n_pairs,
            seed,
            core_fraction,
        }
    }

    /// All core pairs when the core is small; otherwise `n_pairs` seeded
    /// random pairs per layer plus every nearest-neighbour pair.
    fn pairs(&self, g: &Grid, layer: usize) -> Pairs {
        let core = g.core_nodes(self.core_fraction);
        if core.len() <= ALL_PAIRS_LIMIT {
            return Pairs::All(core);
        }
        let mut list = Vec::new();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(layer as u64);
        let n = core.len();
        for _ in 0..self.n_pairs {
            let a = core[rng.gen_range(0..n)];
            let b = core[rng.gen_range(0..n)];
            if a != b {
                list.push((a, b));
            }
        }
        for &i in &core {
            for k in 0..g.dim() {
                if g.axis_index(i, k) + 1 < g.n_x() {
                    let j = i + g.stride(k);
                    if g.in_core(j, self.core_fraction) {
                        list.push((i, j));
                    }
                }
            }
        }
        Pairs::List(list)
    }
}

enum Pairs {
    All(Vec<usize>),
    List(Vec<(usize, usize)>),
}

fn dist(g: &Grid, i: usize, j: usize) -> f64 {
    let (a, b) = (g.node_coords(i), g.node_coords(j));
    norm(&a.iter().zip(&b).map(|(x, y)| x - y).collect::<Vec<_>>())
}

/// max over scanned pairs of f(|u(x) − u(y)|, |x − y|), or `init` if none.
fn scan_pairs(u: &ValueFunction, s: &PairSampler, init: f64, f: impl Fn(f64, f64) -> f64 + Sync) -> f64 {
    let g = u.grid();
    let per_layer: Vec<f64> = (0..g.n_layers())
        .into_par_iter()
        .map(|l| {
            let vals = u.layer(l);
            let mut best = init;
            match s.pairs(g, l) {
                Pairs::All(core) => {
                    let coords: Vec<Vec<f64>> = core.iter().map(|&i| g.node_coords(i)).collect();
                    for a in 0..core.len() {
                        for b in a + 1..core.len() {
                            let dx = norm(&coords[a].iter().zip(&coords[b]).map(|(x, y)| x - y).collect::<Vec<_>>());
                            best = best.max(f((vals[core[a]] - vals[core[b]]).abs(), dx));
                        }
                    }
                }
                Pairs::List(list) => {
                    for (i, j) in list {
                        best = best.max(f((vals[i] - vals[j]).abs(), dist(g, i, j)));
                    }
                }
            }
            best
        })
        .collect();
    per_layer.into_iter().fold(init, f64::max)
}

/// sup over same-time pairs x ≠ y of |u(t,x) − u(t,y)| / |x − y|.
pub fn lipschitz_quotient(u: &ValueFunction, sampler: &PairSampler) -> f64 {
    scan_pairs(u, sampler, 0.0, |du, dx| du / dx)
}

/// M̃ = max over same-time pairs of u(t,x) − u(t,y) − K̃ |x − y|.
pub fn deteriorated_check(u: &ValueFunction, k_tilde: f64, sampler: &PairSampler) -> f64 {
    scan_pairs(u, sampler, f64::NEG_INFINITY, |du, dx| du - k_tilde * dx)
}

/// max over all nodes and layers of |u| / (1 + |x|).
pub fn growth_envelope(u: &ValueFunction) -> f64 {
    let g = u.grid();
    let weights: Vec<f64> = (0..g.n_nodes()).map(|i| 1.0 + norm(&g.node_coords(i))).collect();
    let per_layer: Vec<f64> = (0..g.n_layers())
        .into_par_iter()
        .map(|l| max_fold(u.layer(l).iter().zip(&weights).map(|(v, w)| v.abs() / w)))
        .collect();
    max_fold(per_layer)
}

/// min over nodes and layers of L_A (1 + |Du|) − |ᾱ|.
pub fn control_norm_certificate(field: &ControlField, u: &ValueFunction, l_a: f64) -> Result<f64, EstimateError> {
    let g = u.grid();
    if field.grid() != g {
        return Err(EstimateError::GridMismatch);
    }
    let per_layer: Vec<f64> = (0..g.n_layers())
        .into_par_iter()
        .map(|l| {
            let vals = u.layer(l);
            (0..g.n_nodes())
                .map(|i| l_a * (1.0 + norm(&layer_gradient(g, vals, i))) - norm(field.control(l, i)))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    Ok(per_layer.into_iter().fold(f64::INFINITY, f64::min))
}

/// Verdict thresholds. `None` means the value is reported but not judged.
#[derive(Clone, Debug, PartialEq)]
pub struct CertificateConfig {
    pub core_fraction: f64,
    pub n_pairs: usize,
    pub seed: u64,
    /// Relative slack between stencil and secant measurements.
    pub allowance: f64,
    pub max_sup_grad: Option<f64>,
    pub max_lipschitz: Option<f64>,
    pub max_growth: Option<f64>,
    /// K̃ for the deteriorated pair; defaults to sup_grad (1 + allowance).
    pub k_tilde: Option<f64>,
    /// Largest admissible M̃, relative to max(1, max |u|).
    pub max_m_tilde: f64,
}

impl Default for CertificateConfig {
    fn default() -> Self {
        Self {
            core_fraction: 0.6,
            n_pairs: 100_000,
            seed: 0,
            allowance: 0.05,
            max_sup_grad: None,
            max_lipschitz: None,
            max_growth: None,
            k_tilde: None,
            max_m_tilde: 1e-9,
        }
    }
}

impl CertificateConfig {
    pub fn validate(&self) -> Result<(), EstimateError> {
        if !(self.core_fraction > 0.0 && self.core_fraction <= 1.0) {
            return Err(EstimateError::InvalidConfig {
                name: "core_fraction",
                reason: format!("must lie in (0, 1], got {}", self.core_fraction),
            });
        }
        if !(self.allowance >= 0.0 && self.allowance.is_finite()) {
            return Err(EstimateError::InvalidConfig {
                name: "allowance",
                reason: "must be finite and nonnegative".into(),
            });
        }
        if self.n_pairs == 0 {
            return Err(EstimateError::InvalidConfig {
                name: "n_pairs",
                reason: "must be positive".into(),
            });
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Certificate {
    pub name: &'static str,
    pub value: f64,
    /// NaN when the certificate is report-only.
    pub threshold: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CertificateReport {
    pub sup_grad: f64,
    pub lipschitz_quotient: f64,
    pub growth_l: f64,
    pub deteriorated_pair: (f64, f64),
    pub control_margin: Option<f64>,
    pub core_fraction: f64,
    pub certificates: Vec<Certificate>,
}

impl CertificateReport {
    pub fn all_pass(&self) -> bool {
        self.certificates.iter().all(|c| c.pass)
    }
}

fn upper(name: &'static str, value: f64, threshold: Option<f64>) -> Certificate {
    match threshold {
        Some(t) => Certificate {
            name,
            value,
            threshold: t,
            pass: value <= t,
        },
        None => Certificate {
            name,
            value,
            threshold: f64::NAN,
            pass: value.is_finite(),
        },
    }
}

/// Runs every certificate. The control margin needs a field and L_A.
pub fn certify(
    u: &ValueFunction,
    control: Option<(&ControlField, f64)>,
    cfg: &CertificateConfig,
) -> Result<CertificateReport, EstimateError> {
    cfg.validate()?;
    let sampler = PairSampler::new(cfg.n_pairs, cfg.seed, cfg.core_fraction);
    let sup_grad = sup_gradient(u, cfg.core_fraction);
    let lip = lipschitz_quotient(u, &sampler);
    let growth = growth_envelope(u);
    let k_tilde = cfg.k_tilde.unwrap_or(sup_grad * (1.0 + cfg.allowance));
    let m_tilde = deteriorated_check(u, k_tilde, &sampler);
    let scale = u.values().iter().fold(1.0f64, |m, v| m.max(v.abs()));

    let mut certs = vec![
        upper("sup_grad", sup_grad, cfg.max_sup_grad),
        upper("lipschitz_quotient", lip, cfg.max_lipschitz),
        upper(
            "stencil_secant_gap",
            (lip - sup_grad).abs(),
            Some(cfg.allowance * sup_grad.max(1.0)),
        ),
        upper("growth_envelope", growth, cfg.max_growth),
        upper("deteriorated_m_tilde", m_tilde, Some(cfg.max_m_tilde * scale)),
    ];
    let mut margin = None;
    if let Some((field, l_a)) = control {
        let m = control_norm_certificate(field, u, l_a)?;
        let res = field.resolution();
        certs.push(Certificate {
            name: "control_margin",
            value: m,
            threshold: -res,
            pass: m >= -res,
        });
        margin = Some(m);
    }
    Ok(CertificateReport {
        sup_grad,
        lipschitz_quotient: lip,
        growth_l: growth,
        deteriorated_pair: (k_tilde, m_tilde),
        control_margin: margin,
        core_fraction: cfg.core_fraction,
        certificates: certs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid1(r: f64, n_x: usize) -> Grid {
        Grid::new(vec![0.0], r, n_x, 2, 1.0).unwrap()
    }

    fn sampler() -> PairSampler {
        PairSampler::new(1000, 0, 0.6)
    }

    #[test]
    fn zero_field() {
        let u = ValueFunction::zeros(grid1(4.0, 33));
        assert_eq!(sup_gradient(&u, 0.6), 0.0);
        assert_eq!(lipschitz_quotient(&u, &sampler()), 0.0);
        assert_eq!(growth_envelope(&u), 0.0);
        assert!(deteriorated_check(&u, 1.0, &sampler()) < 0.0);
        let f = ControlField::zeros(u.grid().clone());
        assert_eq!(control_norm_certificate(&f, &u, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn affine_field() {
        let u = ValueFunction::from_fn(grid1(4.0, 33), |_, x| x[0]);
        assert_eq!(lipschitz_quotient(&u, &sampler()), 1.0);
        assert!((sup_gradient(&u, 0.6) - 1.0).abs() < 1e-14);
        assert!((growth_envelope(&u) - 0.8).abs() < 1e-15);
        assert!(deteriorated_check(&u, 2.0, &sampler()) <= 0.0);
        let small = deteriorated_check(&u, 0.5, &sampler());
        let big_box = ValueFunction::from_fn(grid1(8.0, 65), |_, x| x[0]);
        assert!(small > 0.0 && deteriorated_check(&big_box, 0.5, &sampler()) > small);
    }

    #[test]
    fn cone_growth_is_one() {
        let u = ValueFunction::from_fn(grid1(4.0, 33), |_, x| 1.0 + x[0].abs());
        assert!((growth_envelope(&u) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sine_gradient() {
        let n = 2 * 157 * 4 + 1;
        let g = Grid::new(vec![0.0], 3.0, n, 2, 1.0).unwrap();
        let u = ValueFunction::from_fn(g, |_, x| x[0].sin());
        assert!((sup_gradient(&u, 1.0) - 1.0).abs() < 1e-3);
    }

    #[test]
    fn adversarial_control_fails() {
        let g = grid1(4.0, 9);
        let u = ValueFunction::zeros(g.clone());
        let vals = vec![5.0; g.n_layers() * g.n_nodes()];
        let f = ControlField::from_values(g, vals, 0.0).unwrap();
        assert_eq!(control_norm_certificate(&f, &u, 1.0).unwrap(), -4.0);
    }

    #[test]
    fn spike_breaks_consistency() {
        let g = grid1(4.0, 33);
        let mut u = ValueFunction::from_fn(g, |_, x| 0.5 * x[0]);
        u.layer_mut(1)[16] += 10.0;
        let rep = certify(&u, None, &CertificateConfig::default()).unwrap();
        assert!(!rep.all_pass());
    }

    #[test]
    fn sampled_pairs_when_core_is_large() {
        let g = Grid::new(vec![0.0, 0.0], 1.0, 201, 1, 1.0).unwrap();
        assert!(g.core_nodes(1.0).len() > ALL_PAIRS_LIMIT);
        let u = ValueFunction::from_fn(g, |_, x| 2.0 * x[0] - x[1]);
        let q = lipschitz_quotient(&u, &PairSampler::new(2000, 3, 1.0));
        assert!(q <= 5f64.sqrt() + 1e-12 && q >= 2.0 - 1e-12);
    }
}
