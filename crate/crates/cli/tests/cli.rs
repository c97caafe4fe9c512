use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn elsg(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_elsg"))
        .args(args)
        .current_dir(dir)
        .env("ELSG_THREADS", "1")
        .output()
        .expect("run elsg")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

const SHORT: &str = "settings:\n  mode: zcbf-sampled\n  period: 0.001\n  duration: 1.0\n  substeps: 10\n  margin: eta-bar\n";

#[test]
fn synth_then_simulate_then_verify() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "s1.yaml", &format!("scenario: s1-sampled\n{SHORT}"));

    let o = elsg(&["synth", "-c", "s1.yaml"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report = fs::read_to_string(d.join("out/s1-sampled.report.yaml")).unwrap();
    assert!(report.contains("gamma_stars"));
    assert!(text(&o).contains("largest period"));

    let o = elsg(&["simulate", "-c", "s1.yaml", "--plots"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = fs::read_to_string(d.join("out/s1-sampled.zcbf-sampled.csv")).unwrap();
    let golden = fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/trace_header.csv")).unwrap();
    assert_eq!(csv.lines().next(), golden.lines().next());
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 1001);
    assert!(rows.iter().all(|r| r.ends_with(",optimal,0")));
    for sig in ["q", "v", "u"] {
        let svg = fs::read_to_string(d.join(format!("out/s1-sampled.zcbf-sampled.{sig}.svg"))).unwrap();
        assert!(svg.contains("stroke-dasharray"));
    }

    let o = elsg(&["verify", "-c", "s1.yaml", "--grid", "8", "--samples", "2000"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    assert!(!text(&o).contains("FAIL"));
    assert!(d.join("out/s1-sampled.verify.yaml").exists());
}

#[test]
fn nominal_run_is_exempt_from_the_safety_exit() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "s1.yaml", &format!("scenario: s1-sampled\n{SHORT}"));
    let o = elsg(&["simulate", "-c", "s1.yaml", "--mode", "nominal-only"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let csv = fs::read_to_string(d.join("out/s1-sampled.nominal-only.csv")).unwrap();
    assert!(csv.lines().skip(1).any(|r| !r.ends_with(",none,0")));
}

#[test]
fn weak_actuator_run_exits_with_safety_code() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    // Starts just inside the safe set, moving towards the upper bound, with too little torque
    // to stop in time.
    let cfg = format!(
        "scenario: s1-sampled\n{SHORT}x0: [1.5, 2.0944]\nxv0: [0.069, 0.0]\nspec:\n  q_min: [-1.5707963267948966, 1.5707963267948966]\n  \
         q_max: [1.5707963267948966, 2.6179938779914944]\n  v_max: [1.5, 1.5]\n  u_max: [0.01, 0.01]\n\
         params:\n  barrier:\n    alpha: atan\n    beta: cubic\n    gamma: 1.0\n    nu: 200.0\n    delta: 0.01\n    eta_bar: 0.0\n"
    );
    write(d, "weak.yaml", &cfg);
    let o = elsg(&["simulate", "-c", "weak.yaml"], d);
    assert_eq!(code(&o), 3, "{}", text(&o));
    assert!(d.join("out/s1-sampled.zcbf-sampled.csv").exists());
}

#[test]
fn zero_actuation_fails_assumption_1() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(
        d,
        "zero.yaml",
        "scenario: s1-sampled\nspec:\n  q_min: [-1.5, 1.6]\n  q_max: [1.5, 2.6]\n  v_max: [1.5, 1.5]\n  u_max: [0, 0]\n",
    );
    let o = elsg(&["synth", "-c", "zero.yaml"], d);
    assert_eq!(code(&o), 2);
    assert!(text(&o).contains("Assumption 1 violated"));
}

#[test]
fn parse_errors_exit_1_with_location() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "bad.yaml", "scenario: s1-sampled\nsettings:\n  mode: zcbf-sampled\n  perod: 0.001\n");
    let o = elsg(&["synth", "-c", "bad.yaml"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("bad.yaml:4:"), "{}", text(&o));
    assert!(text(&o).contains("perod"));

    let o = elsg(&["synth", "-c", "missing.yaml"], d);
    assert_eq!(code(&o), 1);

    write(d, "unknown.yaml", "scenario: s9\n");
    let o = elsg(&["synth", "-c", "unknown.yaml"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("unknown scenario"));
}

#[test]
fn simulate_without_parameters_asks_for_synth() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "s2.yaml", "scenario: s2-nonlinear\n");
    let o = elsg(&["simulate", "-c", "s2.yaml"], d);
    assert_eq!(code(&o), 1);
    assert!(text(&o).contains("elsg synth"));
}

#[test]
fn inflated_gamma_fails_verification() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    write(d, "s1.yaml", "scenario: s1-continuous\n");
    let o = elsg(&["synth", "-c", "s1.yaml"], d);
    assert_eq!(code(&o), 0, "{}", text(&o));
    let report = fs::read_to_string(d.join("out/s1-continuous.report.yaml")).unwrap();
    let field = |key: &str| -> f64 {
        let chosen = &report[report.find("chosen:").unwrap()..];
        let line = chosen.lines().find(|l| l.trim_start().starts_with(key)).unwrap();
        line.split(':').nth(1).unwrap().trim().parse().unwrap()
    };
    let cfg = format!(
        "scenario: s1-continuous\nparams:\n  barrier:\n    alpha: atan\n    beta: cubic\n    gamma: {}\n    nu: {}\n    delta: {}\n    eta_bar: 0.0\n",
        1.5 * field("gamma:"),
        field("nu:"),
        field("delta:")
    );
    write(d, "inflated.yaml", &cfg);
    let o = elsg(&["verify", "-c", "inflated.yaml", "--grid", "8", "--samples", "2000"], d);
    assert_eq!(code(&o), 4, "{}", text(&o));
    assert!(text(&o).contains("FAIL H^delta inside V"));
    assert!(text(&o).contains("counterexample: q ="));
}

#[test]
fn help_and_usage() {
    let tmp = TempDir::new().unwrap();
    let o = elsg(&["--help"], tmp.path());
    assert_eq!(code(&o), 0);
    for cmd in ["synth", "simulate", "verify"] {
        assert!(text(&o).contains(cmd));
    }
    let o = elsg(&["frobnicate"], tmp.path());
    assert_eq!(code(&o), 1);
}
