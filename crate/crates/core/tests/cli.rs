use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_accel-flow"))
}

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn run_config(cmd: &str, config: &Path, out: &Path) -> Output {
    run(&[cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap(), "--quiet"])
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn summary(dir: &Path, name: &str) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join(name)).unwrap()).unwrap()
}

#[test]
fn simulate_constant_damping_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("simulate", &config_path("constant_damping.toml"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty(), "--quiet prints nothing");
    let s = summary(out.path(), "summary.json");
    assert_eq!(s["pass"], true);
    assert_eq!(s["checks"]["monotonicity"]["pass"], true);
    let csv = std::fs::read_to_string(out.path().join("trajectory.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "t,x1,x2,z1,z2,V,f_gap,breg_xstar_z,breg_xstar_x,breg_z_x,slack1,slack2,slack3,slack4"
    );
    assert!(!csv.contains('\r'));
}

#[test]
fn trajectories_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for dir in [&a, &b] {
        let o = run(&[
            "simulate",
            "--config",
            config_path("polynomial_flat.toml").to_str().unwrap(),
            "--out",
            dir.path().to_str().unwrap(),
            "--seed",
            "3",
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0));
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("trajectory.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn invalid_schedule_exits_with_check_failure() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("simulate", &config_path("rate_scaled.toml"), out.path());
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(summary(out.path(), "summary.json")["pass"], false);
}

#[test]
fn config_errors_exit_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nid = \"quadratic\"\ndiag = [1.0, 4.0]\n\n[schedule]\nfamily = \"constant_damping\"\nd = -1.0\nsigma = 1.0\n",
    );
    let o = run_config("simulate", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("exp.toml:6:"), "{err}");

    let cfg = write_config(dir.path(), "[problem]\ndiag = [1.0]\n");
    let o = run_config("simulate", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exp.toml:1:"));

    let o = run(&["simulate"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["simulate", "--config", "/nonexistent/exp.toml"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["explode"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unstable_step_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nid = \"quadratic\"\ndiag = [1.0, 1e6]\n\n[schedule]\nfamily = \"constant_damping\"\nd = 2.0\nsigma = 1.0\n\n\
         [integrator]\nt_end = 20.0\nstep = 1e-2\n",
    );
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}

#[test]
fn check_assumptions_reports_slacks() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("check-assumptions", &config_path("hyperbolic_check.toml"), out.path());
    assert_eq!(o.status.code(), Some(0));
    let v = summary(out.path(), "verdict.json");
    assert_eq!(v["pass"], true);
    let eq = v["equality"].as_array().unwrap();
    assert_eq!(eq[1..].iter().filter(|e| e.as_bool() == Some(true)).count(), 2);
    let csv = std::fs::read_to_string(out.path().join("slacks.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1001);

    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "[problem]\nid = \"canonical_strongly_convex\"\n[schedule]\nfamily = \"constant_damping\"\nd = 5.0\nsigma = 1.0\n",
    );
    let o = run_config("check-assumptions", &cfg, dir.path());
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(summary(dir.path(), "verdict.json")["convexity"]["pass"], true);
}

#[test]
fn reproduce_table_writes_all_rows() {
    let out = tempfile::tempdir().unwrap();
    let o = run(&["reproduce-table", "--out", out.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(out.path().join("table.txt")).unwrap();
    assert_eq!(text.lines().count(), 10);
    let json = summary(out.path(), "table.json");
    assert_eq!(json["rows"].as_array().unwrap().len(), 8);
}

#[test]
fn smooth_demo_passes() {
    let out = tempfile::tempdir().unwrap();
    let o = run_config("smooth-demo", &config_path("smooth_demo.toml"), out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(out.path(), "summary.json");
    assert_eq!(s["certification"]["pass"], true);
    assert_eq!(s["seed"], 11);
}

#[test]
fn help_exits_0() {
    let o = run(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("reproduce-table"));
}
