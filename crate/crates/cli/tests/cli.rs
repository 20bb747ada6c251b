//! End-to-end checks of the `rcm` binary: exit codes, value examples, file
//! outputs, and byte-level determinism.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn rcm(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rcm"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn gen_env_writes_deterministic_file_with_summary() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["gen-env", "--d", "3", "--n", "8", "--dist", "uniform-elliptic:2", "--seed", "1", "-o", "env.json"];
    let out = rcm(&args, dir.path());
    let summary = stdout_json(&out);
    assert_eq!(summary["edges"], serde_json::json!(3 * 8 * 8 * 8));
    assert!(summary["weights"]["min"].as_f64().unwrap() >= 0.5);
    assert!(summary["weights"]["max"].as_f64().unwrap() <= 2.0);
    let first = fs::read(dir.path().join("env.json")).unwrap();
    let out2 = rcm(&args, dir.path());
    assert!(out2.status.success());
    let second = fs::read(dir.path().join("env.json")).unwrap();
    assert_eq!(first, second, "same flags must produce byte-identical files");
}

#[test]
fn invalid_gamma_exits_2_naming_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcm(
        &["gen-env", "--d", "2", "--n", "4", "--dist", "power-low-tail:2,1", "-o", "env.json"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(2));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("0 < gamma < 2"), "message: {msg}");
}

#[test]
fn compute_examples_match_closed_forms() {
    let dir = tempfile::tempdir().unwrap();
    let v = stdout_json(&rcm(
        &["compute", "conductance", "--d", "2", "--n", "4", "--dist", "constant:1"],
        dir.path(),
    ));
    assert!((v["value"].as_f64().unwrap() - 2.0).abs() < 1e-9);

    let v = stdout_json(&rcm(
        &["compute", "diffusion", "--d", "1", "--n", "4", "--weights", "1,2,1,2"],
        dir.path(),
    ));
    assert!((v["value"].as_f64().unwrap() - 8.0 / 9.0).abs() < 1e-10);

    let v = stdout_json(&rcm(
        &["compute", "spectral", "--d", "1", "--n", "3", "--dist", "constant:1"],
        dir.path(),
    ));
    let expect = 1.0 - (std::f64::consts::PI / 4.0).cos();
    assert!((v["value"].as_f64().unwrap() - expect).abs() < 1e-8);

    let v = stdout_json(&rcm(
        &[
            "compute", "green", "--d", "2", "--n-steps", "4", "--direction", "1,0",
            "--pot-dist", "constant:1",
        ],
        dir.path(),
    ));
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn compute_from_saved_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcm(
        &["gen-env", "--d", "2", "--n", "4", "--dist", "two-point:0.5,0.5,2", "--seed", "9",
          "--closure", "closed-box", "-o", "env.json"],
        dir.path(),
    );
    assert!(out.status.success());
    let a = stdout_json(&rcm(&["compute", "conductance", "--env", "env.json"], dir.path()));
    let b = stdout_json(&rcm(
        &["compute", "conductance", "--d", "2", "--n", "4", "--dist", "two-point:0.5,0.5,2", "--seed", "9"],
        dir.path(),
    ));
    assert_eq!(a["value"], b["value"]);
    // closure mismatch is a config error
    let out = rcm(&["compute", "diffusion", "--env", "env.json"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

const SWEEP_CONFIG: &str = r#"
version = 1
quantity = "conductance"
d = 2
n_list = [3, 4]
dist = "constant:1"
samples = 4
master_seed = 5
tol = 1e-10
output_dir = "out"
"#;

#[test]
fn sweep_outputs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.toml"), SWEEP_CONFIG).unwrap();
    let out = rcm(&["sweep", "sweep.toml", "--plot"], dir.path());
    let info = stdout_json(&out);
    let csv_path = dir.path().join(info["csv"].as_str().unwrap());
    let json_path = dir.path().join(info["summary"].as_str().unwrap());
    let csv1 = fs::read(&csv_path).unwrap();
    let json1 = fs::read(&json_path).unwrap();
    // constant distribution: zero variance at every N
    for g in info["per_n"].as_array().unwrap() {
        assert_eq!(g["var"].as_f64().unwrap(), 0.0);
        assert!((g["mean"].as_f64().unwrap() - 2.0).abs() < 1e-10);
    }
    // rerun with an explicit thread count: byte-identical outputs
    let out2 = rcm(&["sweep", "sweep.toml", "--plot", "--threads", "2"], dir.path());
    assert!(out2.status.success());
    assert_eq!(csv1, fs::read(&csv_path).unwrap());
    assert_eq!(json1, fs::read(&json_path).unwrap());
    // plots exist and are deterministic too
    let run_id = info["run_id"].as_str().unwrap();
    let tail_svg = dir.path().join("out").join(format!("tail_{run_id}.svg"));
    assert!(tail_svg.exists());
    let svg1 = fs::read(&tail_svg).unwrap();
    let out3 = rcm(&["sweep", "sweep.toml", "--plot"], dir.path());
    assert!(out3.status.success());
    assert_eq!(svg1, fs::read(&tail_svg).unwrap());
}

#[test]
fn sweep_flag_overrides_and_unknown_keys() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sweep.toml"), SWEEP_CONFIG).unwrap();
    let out = rcm(&["sweep", "sweep.toml", "--samples", "2"], dir.path());
    let info = stdout_json(&out);
    let csv = fs::read_to_string(dir.path().join(info["csv"].as_str().unwrap())).unwrap();
    // header + 2 samples x 2 sizes
    assert_eq!(csv.lines().count(), 1 + 4);

    fs::write(dir.path().join("bad.toml"), format!("{SWEEP_CONFIG}\nmystery = 1\n")).unwrap();
    let out = rcm(&["sweep", "bad.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = rcm(&["sweep", "nope.toml"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreachable_tolerance_exits_3() {
    // a relative residual of 1e-30 is below machine precision; CG must give
    // up at its iteration cap and the CLI maps that to the solver exit code
    let dir = tempfile::tempdir().unwrap();
    let out = rcm(
        &["compute", "conductance", "--d", "2", "--n", "4",
          "--dist", "uniform-elliptic:2", "--seed", "3", "--tol", "1e-30"],
        dir.path(),
    );
    assert_eq!(out.status.code(), Some(3), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
