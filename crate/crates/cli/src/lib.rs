//! Batch front end: reads an experiment file, runs solve, certify, verify,
//! ladder or lemmas, and writes CSV tables plus a manifest. Exit codes are
//! fixed so runs compose in CI.

pub mod config;
pub mod tables;

use std::path::{Path, PathBuf};

use hjb_core::cole_hopf::{compare_on_core, invert, solve_linear, to_linear};
use hjb_core::estimates::certify;
use hjb_core::matrix_lemmas::{
    doubling_matrix_bound, doubling_suite, trace_product_bound, trace_suite, DoublingForm, SymmetricMatrix,
};
use hjb_core::mc_verify::{max_exit_fraction, verify_value, McError};
use hjb_core::pde_solver::solve_with_truncation_escalation;
use hjb_core::{ControlField, Grid, HJBProblem, SolverError, TruncationTrace, ValueFunction};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::ExperimentConfig;
use tables::{fmt, Table};

pub mod exit {
    pub const PASS: i32 = 0;
    pub const CERTIFICATE: i32 = 1;
    pub const ESCALATION: i32 = 2;
    pub const MONTE_CARLO: i32 = 3;
    pub const CROSS_CHECK: i32 = 4;
    pub const CONFIG: i32 = 64;
    pub const DATA: i32 = 65;
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot write output: {0}")]
    Io(String),
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("simulation failure: {0}")]
    Simulation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Data(_) | CliError::Io(_) => exit::DATA,
            CliError::Solver(_) => exit::ESCALATION,
            CliError::Simulation(_) => exit::MONTE_CARLO,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    /// Certificates for a stored value table (defaults to `<out>/u.csv`).
    Certify { u_csv: Option<PathBuf> },
    Verify,
    Ladder,
    Lemmas,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Certify { .. } => "certify",
            Command::Verify => "verify",
            Command::Ladder => "ladder",
            Command::Lemmas => "lemmas",
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

/// Runs a command and returns the process exit code. Diagnostics go to
/// stderr; the summary goes to stdout unless `quiet`.
pub fn run(cmd: &Command, opts: &Options) -> i32 {
    match execute(cmd, opts) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("hjb {}: {e}", cmd.name());
            e.exit_code()
        }
    }
}

struct Run {
    cfg: ExperimentConfig,
    config_hash: String,
    out: PathBuf,
    quiet: bool,
    seed_override: Option<u64>,
}

impl Run {
    fn new(cmd: &Command, opts: &Options) -> Result<Self, CliError> {
        let (mut cfg, config_hash) = match &opts.config {
            Some(path) => {
                let bytes = std::fs::read(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let hash = hex::encode(Sha256::digest(&bytes));
                (ExperimentConfig::load(path)?, hash)
            }
            None if *cmd == Command::Lemmas => (lemma_only_config(), "none".to_string()),
            None => return Err(CliError::Config("--config is required".into())),
        };
        if let Some(s) = opts.seed {
            cfg.set_seed(s);
        }
        let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
        std::fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
        Ok(Self {
            cfg,
            config_hash,
            out,
            quiet: opts.quiet,
            seed_override: opts.seed,
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, t: &Table) -> Result<(), CliError> {
        t.write(&self.path(name))
    }

    fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }

    fn manifest(&self, cmd: &Command, extra: &[(&str, String)]) -> Result<(), CliError> {
        let c = &self.cfg;
        let mut t = Table::new(["key", "value"]);
        let mut kv = |k: &str, v: String| t.push(vec![k.to_string(), v]);
        kv("command", cmd.name().into());
        kv("config_sha256", self.config_hash.clone());
        kv("hjb_core_version", hjb_core::VERSION.into());
        kv("hjb_cli_version", env!("CARGO_PKG_VERSION").into());
        kv(
            "seed_override",
            self.seed_override.map_or_else(|| "none".into(), |s| s.to_string()),
        );
        kv("seed.certificates", c.certificates.seed.to_string());
        kv("seed.mc", c.mc.as_ref().map_or_else(|| "none".into(), |m| m.seed.to_string()));
        kv("seed.lemmas", c.lemmas.seed.to_string());
        kv("params.problem", digest(&format!("{:?}", c.problem)));
        kv("params.grid", digest(&format!("{:?}", c.grid)));
        kv("params.solver", digest(&format!("{:?}", c.solver)));
        kv("params.certificates", digest(&format!("{:?}", c.certificates)));
        kv("params.mc", digest(&format!("{:?}", c.mc)));
        kv("params.verify", digest(&format!("{:?}", c.verify)));
        kv("params.lemmas", digest(&format!("{:?}", c.lemmas)));
        for (k, v) in extra {
            kv(k, v.clone());
        }
        self.write("manifest.csv", &t)
    }
}

fn digest(s: &str) -> String {
    hex::encode(Sha256::digest(s.as_bytes()))
}

fn lemma_only_config() -> ExperimentConfig {
    ExperimentConfig::parse(
        "[problem]\nfamily = \"quadratic\"\ndimension = 1\nhorizon = 1.0\n\
         [grid]\nR_x = 1.0\nn_x = 3\nn_t = 1\n[solver]\n",
    )
    .expect("built-in config parses")
}

pub fn execute(cmd: &Command, opts: &Options) -> Result<i32, CliError> {
    let run = Run::new(cmd, opts)?;
    match cmd {
        Command::Solve => cmd_solve(&run, cmd),
        Command::Certify { u_csv } => {
            let path = u_csv.clone().unwrap_or_else(|| run.path("u.csv"));
            cmd_certify(&run, cmd, &path)
        }
        Command::Verify => cmd_verify(&run, cmd),
        Command::Ladder => cmd_ladder(&run, cmd),
        Command::Lemmas => cmd_lemmas(&run, cmd),
    }
}

type Solved = (ValueFunction, ControlField, TruncationTrace);

/// Escalated solve; `Err(trace)` inside `Ok` when escalation ran out of doublings.
fn escalate(cfg: &ExperimentConfig, p: &HJBProblem, grid: &Grid) -> Result<Result<Solved, TruncationTrace>, CliError> {
    let esc = cfg.escalation(p, grid);
    match solve_with_truncation_escalation(p, grid, &esc, &cfg.scheme()) {
        Ok(s) => Ok(Ok(s)),
        Err(SolverError::Escalation { trace }) => Ok(Err(*trace)),
        Err(e @ SolverError::InvalidConfig { .. }) => Err(CliError::Config(e.to_string())),
        Err(e) => Err(CliError::Solver(e.to_string())),
    }
}

fn report_escalation_failure(run: &Run, trace: &TruncationTrace) {
    eprintln!(
        "truncation escalation did not converge within {} stages (max_doublings = {})",
        trace.stages.len(),
        run.cfg.solver.max_doublings
    );
    for s in &trace.stages {
        eprintln!(
            "  stage {} radius {} sup_grad {} delta_sup {}",
            s.stage, s.radius, s.sup_grad, s.delta_sup
        );
    }
}

fn cmd_solve(run: &Run, cmd: &Command) -> Result<i32, CliError> {
    let cfg = &run.cfg;
    let p = cfg.problem()?;
    let grid = cfg.grid()?;
    let solved = escalate(cfg, &p, &grid)?;
    let trace = match &solved {
        Ok((_, _, t)) | Err(t) => t,
    };
    run.write("truncation_trace.csv", &tables::trace_table(trace))?;
    let (u, field, trace) = match solved {
        Ok(s) => s,
        Err(trace) => {
            report_escalation_failure(run, &trace);
            run.manifest(cmd, &[("verdict", "escalation-failed".into())])?;
            return Ok(exit::ESCALATION);
        }
    };
    let ut = tables::value_table(&u);
    run.write("u.csv", &ut)?;
    run.write("controls.csv", &tables::control_table(&field))?;
    run.manifest(
        cmd,
        &[
            ("final_radius", fmt(trace.final_radius)),
            ("stages", trace.stages.len().to_string()),
            ("verdict", "pass".into()),
        ],
    )?;
    run.say(format!(
        "solve: {} rows, {} escalation stages, final control radius {}",
        ut.len(),
        trace.stages.len(),
        trace.final_radius
    ));
    Ok(exit::PASS)
}

fn certificate_table(report: &hjb_core::estimates::CertificateReport) -> Table {
    let mut t = Table::new(["certificate", "value", "threshold", "verdict", "core_fraction"]);
    for c in &report.certificates {
        t.push(vec![
            c.name.to_string(),
            fmt(c.value),
            fmt(c.threshold),
            verdict(c.pass),
            fmt(report.core_fraction),
        ]);
    }
    t
}

fn verdict(pass: bool) -> String {
    if pass { "pass" } else { "fail" }.to_string()
}

fn cmd_certify(run: &Run, cmd: &Command, u_csv: &Path) -> Result<i32, CliError> {
    let cfg = &run.cfg;
    let grid = cfg.grid()?;
    let u = tables::read_value_function(u_csv, &grid)?;
    let report = certify(&u, None, &cfg.certificate_config()).map_err(|e| CliError::Config(e.to_string()))?;
    run.write("certificates.csv", &certificate_table(&report))?;
    let pass = report.all_pass();
    run.manifest(cmd, &[("verdict", verdict(pass))])?;
    for c in &report.certificates {
        let line = format!("certify: {:<22} value {:<24e} threshold {:e}", c.name, c.value, c.threshold);
        if c.pass {
            run.say(line);
        } else {
            eprintln!("{line}  FAILED");
        }
    }
    Ok(if pass { exit::PASS } else { exit::CERTIFICATE })
}

fn mc_error(e: McError) -> CliError {
    match e {
        McError::NonFinite { .. } => CliError::Simulation(e.to_string()),
        e => CliError::Config(format!("mc: {e}")),
    }
}

fn cmd_verify(run: &Run, cmd: &Command) -> Result<i32, CliError> {
    let cfg = &run.cfg;
    let p = cfg.problem()?;
    let grid = cfg.grid()?;
    let sim = cfg.simulation(&grid)?;
    let vcfg = cfg.verify_config(&grid)?;
    let points = cfg.points()?;

    let (u, field, trace) = match escalate(cfg, &p, &grid)? {
        Ok(s) => s,
        Err(trace) => {
            run.write("truncation_trace.csv", &tables::trace_table(&trace))?;
            report_escalation_failure(run, &trace);
            return Ok(exit::ESCALATION);
        }
    };
    run.write("truncation_trace.csv", &tables::trace_table(&trace))?;

    let report = verify_value(&p, &u, &field, &points, &sim, &vcfg).map_err(mc_error)?;
    let d = grid.dim();
    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x_{k}")));
    header.extend(["u_pde", "v_mc", "stderr", "verdict"].map(String::from));
    let mut vt = Table::new(header);
    for pc in &report.points {
        let mut row = vec![fmt(pc.t)];
        row.extend(pc.x.iter().copied().map(fmt));
        row.extend([fmt(pc.u_pde), fmt(pc.estimate.mean), fmt(pc.estimate.stderr), verdict(pc.pass)]);
        vt.push(row);
    }
    run.write("verify.csv", &vt)?;

    let mut header = vec!["t".to_string()];
    header.extend((1..=d).map(|k| format!("x_{k}")));
    header.extend((1..=d).map(|k| format!("control_{k}")));
    header.extend(["v_mc", "stderr", "excess", "combined_stderr", "verdict"].map(String::from));
    let mut bt = Table::new(header);
    for b in &report.baselines {
        let mut row = vec![fmt(b.t)];
        row.extend(b.x.iter().copied().map(fmt));
        row.extend(b.control.iter().copied().map(fmt));
        row.extend([
            fmt(b.estimate.mean),
            fmt(b.estimate.stderr),
            fmt(b.excess),
            fmt(b.combined_stderr),
            verdict(b.pass),
        ]);
        bt.push(row);
    }
    run.write("verify_baselines.csv", &bt)?;

    let mc_pass = report.all_pass();
    for pc in &report.points {
        let line = format!(
            "verify: t {} x {:?} u_pde {:.6} v_mc {:.6} gap {:.3e} band {:.3e}",
            pc.t, pc.x, pc.u_pde, pc.estimate.mean, pc.gap, pc.band
        );
        if mc_pass {
            run.say(line);
        } else {
            eprintln!("{line} {}", verdict(pc.pass));
        }
    }
    for b in &report.baselines {
        let line = format!(
            "verify: baseline {:?} at t {} x {:?} excess {:.6} combined stderr {:.3e}",
            b.control, b.t, b.x, b.excess, b.combined_stderr
        );
        if mc_pass {
            run.say(line);
        } else {
            eprintln!("{line} {}", verdict(b.pass));
        }
    }

    let mut extra = vec![
        ("final_radius", fmt(trace.final_radius)),
        ("mc_max_exit_fraction", fmt(max_exit_fraction(&report))),
        ("mc_verdict", verdict(mc_pass)),
    ];
    let mut cross_pass = true;
    if cfg.verify.cross_check {
        let allowance = cfg
            .verify
            .cross_check_allowance
            .unwrap_or(3.0 * (grid.h() + grid.dt()));
        let lp = to_linear(&p).map_err(|e| CliError::Config(format!("verify.cross_check: {e}")))?;
        let w = solve_linear(&lp, &grid, &cfg.scheme())
            .and_then(|v| invert(&v))
            .map_err(|e| CliError::Solver(e.to_string()))?;
        let r = compare_on_core(&u, &w, cfg.certificates.core_fraction, trace.final_radius);
        cross_pass = r.sup_discrepancy <= allowance;
        let mut ct = Table::new(["metric", "value"]);
        ct.push(vec!["sup_discrepancy".into(), fmt(r.sup_discrepancy)]);
        ct.push(vec!["mean_discrepancy".into(), fmt(r.mean_discrepancy)]);
        ct.push(vec!["allowance".into(), fmt(allowance)]);
        ct.push(vec!["core_fraction".into(), fmt(r.core_fraction)]);
        ct.push(vec!["core_nodes".into(), r.core_nodes.to_string()]);
        ct.push(vec!["final_radius".into(), fmt(r.final_radius)]);
        ct.push(vec!["verdict".into(), verdict(cross_pass)]);
        run.write("colehopf.csv", &ct)?;
        let line = format!(
            "verify: Cole-Hopf sup discrepancy {:.3e} (allowance {:.3e})",
            r.sup_discrepancy, allowance
        );
        if cross_pass {
            run.say(line);
        } else {
            eprintln!("{line} fail");
        }
        extra.push(("cross_check_verdict", verdict(cross_pass)));
    }
    run.manifest(cmd, &extra)?;
    Ok(if !mc_pass {
        exit::MONTE_CARLO
    } else if !cross_pass {
        exit::CROSS_CHECK
    } else {
        exit::PASS
    })
}

/// One ladder rung: refinement level k and box doubling j.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rung {
    pub level: usize,
    pub box_doubling: usize,
    pub r_x: f64,
    pub n_x: usize,
    pub n_t: usize,
    /// Scaled so every rung measures the same physical core.
    pub core_fraction: f64,
}

/// (n_x, n_t) → ((n_x − 1) 2ᵏ + 1, n_t 2ᵏ) for k < length, each at R_x and
/// 2 R_x with the spacing kept.
pub fn ladder_rungs(cfg: &ExperimentConfig) -> Vec<Rung> {
    let g = &cfg.grid;
    let mut out = Vec::new();
    for level in 0..g.ladder_length {
        let n_x = (g.n_x - 1) * (1 << level) + 1;
        let n_t = g.n_t * (1 << level);
        for box_doubling in 0..2 {
            out.push(Rung {
                level,
                box_doubling,
                r_x: g.r_x * (1 << box_doubling) as f64,
                n_x: (n_x - 1) * (1 << box_doubling) + 1,
                n_t,
                core_fraction: cfg.certificates.core_fraction / (1 << box_doubling) as f64,
            });
        }
    }
    out
}

/// (max − min) / max of the measured gradient bounds; 0 when all vanish.
pub fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if max > 0.0 {
        (max - min) / max
    } else {
        0.0
    }
}

fn cmd_ladder(run: &Run, cmd: &Command) -> Result<i32, CliError> {
    let cfg = &run.cfg;
    if cfg.grid.ladder_length < 2 {
        return Err(CliError::Config(format!(
            "grid.ladder_length: the ladder needs at least 2 levels, got {}",
            cfg.grid.ladder_length
        )));
    }
    let p = cfg.problem()?;
    let mut t = Table::new([
        "rung",
        "level",
        "box_doubling",
        "R_x",
        "n_x",
        "n_t",
        "h",
        "dt",
        "core_fraction",
        "final_radius",
        "sup_grad",
        "lipschitz_quotient",
        "certificates",
    ]);
    let mut grads = Vec::new();
    for (k, rung) in ladder_rungs(cfg).into_iter().enumerate() {
        let grid = cfg.grid_at(rung.r_x, rung.n_x, rung.n_t)?;
        let (u, _, trace) = match escalate(cfg, &p, &grid)? {
            Ok(s) => s,
            Err(trace) => {
                eprintln!("ladder rung {k} (n_x {}, n_t {}, R_x {})", rung.n_x, rung.n_t, rung.r_x);
                report_escalation_failure(run, &trace);
                t.write(&run.path("ladder.csv"))?;
                return Ok(exit::ESCALATION);
            }
        };
        let mut cc = cfg.certificate_config();
        cc.core_fraction = rung.core_fraction;
        let rep = certify(&u, None, &cc).map_err(|e| CliError::Config(e.to_string()))?;
        grads.push(rep.sup_grad);
        t.push(vec![
            k.to_string(),
            rung.level.to_string(),
            rung.box_doubling.to_string(),
            fmt(rung.r_x),
            rung.n_x.to_string(),
            rung.n_t.to_string(),
            fmt(grid.h()),
            fmt(grid.dt()),
            fmt(rung.core_fraction),
            fmt(trace.final_radius),
            fmt(rep.sup_grad),
            fmt(rep.lipschitz_quotient),
            verdict(rep.all_pass()),
        ]);
        run.say(format!(
            "ladder: rung {k} n_x {} n_t {} R_x {} sup_grad {:.6}",
            rung.n_x, rung.n_t, rung.r_x, rep.sup_grad
        ));
    }
    run.write("ladder.csv", &t)?;
    let spread = relative_spread(&grads);
    let bound = cfg.certificates.ladder_spread;
    let pass = spread <= bound;
    run.manifest(
        cmd,
        &[
            ("ladder_spread", fmt(spread)),
            ("ladder_spread_bound", fmt(bound)),
            ("verdict", verdict(pass)),
        ],
    )?;
    let line = format!("ladder: relative spread {spread:.3e} (bound {bound})");
    if pass {
        run.say(line);
        Ok(exit::PASS)
    } else {
        eprintln!("{line} exceeded");
        Ok(exit::CERTIFICATE)
    }
}

fn worked_examples() -> Vec<(&'static str, f64, f64, bool)> {
    let id = SymmetricMatrix::identity;
    let diag = |v: &[f64]| SymmetricMatrix::diag(v);
    let mut out = Vec::new();
    let cases = [
        ("trace_equality_identity", id(2).scaled(2.0), id(2).scaled(-1.0), 2.0, 0.0, (-4.0, -4.0)),
        ("trace_strict_diagonal", diag(&[1.0, 3.0]), diag(&[-1.0, -2.0]), 1.0, 0.0, (-7.0, -3.0)),
        ("trace_equality_mixed", diag(&[2.0, 2.0]), diag(&[1.0, -1.0]), 2.0, 1.0, (0.0, 0.0)),
    ];
    for (name, a, b, m, big_m, want) in cases {
        let ok = trace_product_bound(&a, &b, m, big_m)
            .map(|c| (c.lhs, c.rhs) == want && c.holds)
            .unwrap_or(false);
        out.push((name, want.0, want.1, ok));
    }
    let half = diag(&[0.5]);
    let want = (0.0, 5.0 * std::f64::consts::SQRT_2);
    let ok = doubling_matrix_bound(&id(1), &half, &half, 1.0, 1.0)
        .map(|c| c.lhs == want.0 && (c.rhs - want.1).abs() <= 1e-14 && c.holds)
        .unwrap_or(false);
    out.push(("doubling_scalar_half", want.0, want.1, ok));
    out
}

fn cmd_lemmas(run: &Run, cmd: &Command) -> Result<i32, CliError> {
    let l = &run.cfg.lemmas;
    let suites = [
        ("trace_product_bound", "stated", l.max_dim_trace, trace_suite(l.max_dim_trace, l.trials, l.seed)),
        (
            "doubling_matrix_bound",
            "stated",
            l.max_dim_doubling,
            doubling_suite(l.max_dim_doubling, l.trials, l.seed, DoublingForm::Stated),
        ),
        (
            "doubling_matrix_bound",
            "directional",
            l.max_dim_doubling,
            doubling_suite(l.max_dim_doubling, l.trials, l.seed, DoublingForm::Directional),
        ),
    ];
    let mut t = Table::new(["lemma", "form", "max_dim", "trials", "violations", "max_ratio", "verdict"]);
    let mut pass = true;
    for (name, form, d, s) in &suites {
        let ok = s.violations == 0;
        pass &= ok;
        t.push(vec![
            name.to_string(),
            form.to_string(),
            d.to_string(),
            s.trials.to_string(),
            s.violations.to_string(),
            fmt(s.max_ratio),
            verdict(ok),
        ]);
        let line = format!(
            "lemmas: {name} ({form}, d <= {d}) {} trials, {} violations, max lhs/rhs {:.6}",
            s.trials, s.violations, s.max_ratio
        );
        if ok {
            run.say(line);
        } else {
            eprintln!("{line}");
        }
    }
    run.write("lemmas.csv", &t)?;
    let mut et = Table::new(["example", "lhs", "rhs", "verdict"]);
    for (name, lhs, rhs, ok) in worked_examples() {
        pass &= ok;
        et.push(vec![name.to_string(), fmt(lhs), fmt(rhs), verdict(ok)]);
    }
    run.write("lemma_examples.csv", &et)?;
    run.manifest(cmd, &[("verdict", verdict(pass))])?;
    Ok(if pass { exit::PASS } else { exit::CERTIFICATE })
}
