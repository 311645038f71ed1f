use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CLOSED_FORM: &str = r#"
[problem]
family = "quadratic"
dimension = 1
horizon = 1.0
g.slope = [1.0]

[grid]
R_x = 4.0
n_x = 33
n_t = 32

[solver]
R0_control = 0.25
"#;

const ZERO: &str = r#"
[problem]
family = "quadratic"
dimension = 1
horizon = 1.0

[grid]
R_x = 2.0
n_x = 17
n_t = 8

[solver]
"#;

const MC: &str = r#"
[mc]
n_paths = 2000
seed = 3
baselines = [[0.0]]
points = [[0.0, 0.0], [0.5, 0.4]]
"#;

struct Case {
    dir: TempDir,
}

impl Case {
    fn new(config: &str) -> Self {
        let dir = TempDir::new().unwrap();
        fs::write(dir.path().join("exp.toml"), config).unwrap();
        Self { dir }
    }

    fn out(&self) -> PathBuf {
        self.dir.path().join("out")
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_hjb"))
            .args(args)
            .arg("--config")
            .arg(self.dir.path().join("exp.toml"))
            .arg("--out")
            .arg(self.out())
            .arg("--quiet")
            .output()
            .unwrap()
    }
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

#[test]
fn closed_form_solve_writes_every_table() {
    let c = Case::new(CLOSED_FORM);
    let o = c.run(&["solve"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(header(&c.file("u.csv")), ["t", "x_1", "u", "grad_norm"]);
    // every layer, t = 0 and t = T included
    assert_eq!(rows(&c.file("u.csv")).len(), 33 * 33);
    assert_eq!(header(&c.file("controls.csv")), ["t", "x_1", "alpha_1"]);
    assert_eq!(rows(&c.file("controls.csv")).len(), 33 * 33);
    assert_eq!(
        header(&c.file("truncation_trace.csv")),
        ["stage", "radius", "sup_grad", "delta_sup"]
    );
    assert!(c.file("manifest.csv").exists());

    // terminal layer is g at the nodes, printed with 17 significant digits
    let u = rows(&c.file("u.csv"));
    let last = &u[u.len() - 1];
    assert_eq!(last[0], "1.0000000000000000e0");
    assert_eq!(last[1], "4.0000000000000000e0");
    assert_eq!(last[2], "4.0000000000000000e0");
}

#[test]
fn negative_half_width_is_a_config_error() {
    let c = Case::new(&CLOSED_FORM.replace("R_x = 4.0", "R_x = -4.0"));
    let o = c.run(&["solve"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("R_x"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_rejected_with_its_name() {
    let c = Case::new(&CLOSED_FORM.replace("n_t = 32", "n_t = 32\nnx_typo = 5"));
    let o = c.run(&["solve"]);
    assert_eq!(code(&o), 64);
    let err = stderr(&o);
    assert!(err.contains("nx_typo") && err.contains("line"), "{err}");
}

#[test]
fn missing_section_is_rejected() {
    let c = Case::new(&CLOSED_FORM.replace("[solver]\nR0_control = 0.25\n", ""));
    assert_eq!(code(&c.run(&["solve"])), 64);
}

#[test]
fn no_doublings_forces_escalation_failure() {
    let c = Case::new(&CLOSED_FORM.replace("R0_control = 0.25", "R0_control = 0.25\nmax_doublings = 0"));
    let o = c.run(&["solve"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("stage 0"), "{}", stderr(&o));
    let trace = rows(&c.file("truncation_trace.csv"));
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0][3], "inf");
    assert!(!c.file("u.csv").exists());
}

#[test]
fn zero_problem_certifies() {
    let c = Case::new(ZERO);
    assert_eq!(code(&c.run(&["solve"])), 0);
    let o = c.run(&["certify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let certs = rows(&c.file("certificates.csv"));
    assert_eq!(
        header(&c.file("certificates.csv")),
        ["certificate", "value", "threshold", "verdict", "core_fraction"]
    );
    assert!(certs.iter().all(|r| r[3] == "pass"));
}

fn rewrite_u(path: &Path, f: impl Fn(usize, &mut Vec<String>)) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let head: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    let mut recs: Vec<Vec<String>> = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    for (k, rec) in recs.iter_mut().enumerate() {
        f(k, rec);
    }
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(&head).unwrap();
    for rec in recs {
        w.write_record(&rec).unwrap();
    }
    w.flush().unwrap();
}

#[test]
fn spike_fails_certification() {
    let c = Case::new(CLOSED_FORM);
    assert_eq!(code(&c.run(&["solve"])), 0);
    // centre node of the first layer
    rewrite_u(&c.file("u.csv"), |k, rec| {
        if k == 16 {
            let v: f64 = rec[2].parse().unwrap();
            rec[2] = format!("{:.16e}", v + 10.0);
        }
    });
    let o = c.run(&["certify"]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    let certs = rows(&c.file("certificates.csv"));
    let failed: Vec<&str> = certs.iter().filter(|r| r[3] == "fail").map(|r| r[0].as_str()).collect();
    assert!(failed.contains(&"stencil_secant_gap"), "{failed:?}");
}

#[test]
fn missing_column_is_a_data_error() {
    let c = Case::new(ZERO);
    assert_eq!(code(&c.run(&["solve"])), 0);
    let text = fs::read_to_string(c.file("u.csv")).unwrap();
    let cut: String = text
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string() + "\n")
        .collect();
    fs::write(c.file("u.csv"), cut).unwrap();
    let o = c.run(&["certify"]);
    assert_eq!(code(&o), 65);
    assert!(stderr(&o).contains("grad_norm"), "{}", stderr(&o));
}

#[test]
fn grid_mismatch_is_a_data_error() {
    let c = Case::new(ZERO);
    assert_eq!(code(&c.run(&["solve"])), 0);
    fs::write(c.dir.path().join("exp.toml"), ZERO.replace("n_x = 17", "n_x = 9")).unwrap();
    assert_eq!(code(&c.run(&["certify"])), 65);
}

#[test]
fn impossible_tolerance_fails_verification() {
    let cfg = format!("{CLOSED_FORM}{MC}allowance = 0.0\nsigma_band = 0.0\n");
    let c = Case::new(&cfg);
    let o = c.run(&["verify"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    // measured gaps are listed
    assert!(stderr(&o).contains("gap"), "{}", stderr(&o));
    let v = rows(&c.file("verify.csv"));
    assert_eq!(v.len(), 2);
    assert!(v.iter().any(|r| r[5] == "fail"));
}

#[test]
fn verify_passes_on_closed_form() {
    let cfg = format!("{CLOSED_FORM}{MC}\n[verify]\ncross_check = true\n");
    let c = Case::new(&cfg);
    let o = c.run(&["verify"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        header(&c.file("verify.csv")),
        ["t", "x_1", "u_pde", "v_mc", "stderr", "verdict"]
    );
    let ch = rows(&c.file("colehopf.csv"));
    assert_eq!(ch[0][0], "sup_discrepancy");
    assert_eq!(ch.last().unwrap()[1], "pass");
}

#[test]
fn tight_cross_check_exits_four() {
    let cfg = format!("{CLOSED_FORM}{MC}\n[verify]\ncross_check = true\ncross_check_allowance = 0.0\n");
    let c = Case::new(&cfg);
    assert_eq!(code(&c.run(&["verify"])), 4);
}

#[test]
fn capped_family_cannot_be_cross_checked() {
    let cfg = format!("{}{MC}\n[verify]\ncross_check = true\n", CLOSED_FORM.replace(
        "family = \"quadratic\"",
        "family = \"capped-quadratic\"\ncontrol_radius = 2.0",
    ));
    let c = Case::new(&cfg);
    let o = c.run(&["verify"]);
    assert_eq!(code(&o), 64);
    assert!(stderr(&o).contains("cross_check"), "{}", stderr(&o));
}

#[test]
fn verify_needs_mc_section() {
    assert_eq!(code(&Case::new(CLOSED_FORM).run(&["verify"])), 64);
}

#[test]
fn closed_form_ladder_has_no_spread() {
    let c = Case::new(&CLOSED_FORM.replace("n_t = 32", "n_t = 32\nladder_length = 3"));
    let o = c.run(&["ladder"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let l = rows(&c.file("ladder.csv"));
    assert_eq!(l.len(), 6);
    for r in &l {
        let g: f64 = r[10].parse().unwrap();
        assert!((g - 1.0).abs() < 1e-12, "{g}");
    }
}

#[test]
fn single_rung_ladder_is_a_config_error() {
    let c = Case::new(&CLOSED_FORM.replace("n_t = 32", "n_t = 32\nladder_length = 1"));
    assert_eq!(code(&c.run(&["ladder"])), 64);
}

#[test]
fn lemmas_report_every_suite() {
    let c = Case::new(&format!("{ZERO}\n[lemmas]\ntrials = 300\n"));
    let o = c.run(&["lemmas"]);
    let l = rows(&c.file("lemmas.csv"));
    assert_eq!(l.len(), 3);
    assert_eq!(l[0][0], "trace_product_bound");
    assert_eq!(l[0][6], "pass");
    assert_eq!(l[2][1], "directional");
    assert_eq!(l[2][6], "pass");
    let all_pass = l.iter().all(|r| r[6] == "pass");
    assert_eq!(code(&o), if all_pass { 0 } else { 1 });
    let ex = rows(&c.file("lemma_examples.csv"));
    assert!(ex.iter().all(|r| r[3] == "pass"));
}

#[test]
fn seed_override_reaches_the_manifest() {
    let c = Case::new(&format!("{CLOSED_FORM}{MC}"));
    let o = Command::new(env!("CARGO_BIN_EXE_hjb"))
        .args(["solve", "--quiet", "--seed", "99", "--config"])
        .arg(c.dir.path().join("exp.toml"))
        .arg("--out")
        .arg(c.out())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    let m = rows(&c.file("manifest.csv"));
    let get = |k: &str| m.iter().find(|r| r[0] == k).unwrap()[1].clone();
    assert_eq!(get("seed_override"), "99");
    assert_eq!(get("seed.mc"), "99");
    assert_eq!(get("seed.certificates"), "99");
    assert_eq!(get("config_sha256").len(), 64);
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let c = Case::new(CLOSED_FORM);
    assert_eq!(code(&c.run(&["solve"])), 0);
    let first = fs::read(c.file("u.csv")).unwrap();
    assert_eq!(code(&c.run(&["solve"])), 0);
    assert_eq!(first, fs::read(c.file("u.csv")).unwrap());
}

#[test]
fn usage_errors_use_the_config_code() {
    let o = Command::new(env!("CARGO_BIN_EXE_hjb")).arg("--bogus").output().unwrap();
    assert_eq!(code(&o), 64);
}
