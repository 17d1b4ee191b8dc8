use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use approx::assert_abs_diff_eq;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_duality-bench"));
    c.env_remove("DUALITY_BENCH_OUT");
    c
}

fn write_config(dir: &Path, name: &str, value: &Value) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, serde_json::to_string_pretty(value).unwrap()).unwrap();
    path
}

fn bivariate(rho: f64) -> Value {
    serde_json::json!({
        "config_version": 1,
        "model": {
            "family": "gaussian",
            "mean": [0.0, 0.0],
            "covariance": [[1.0, rho], [rho, 1.0]],
            "block_dims": [1, 1]
        },
        "gibbs": {"n_cycles": 3000, "burn_in": 500, "seed": 5},
        "cavi": {"max_cycles": 1000, "tolerance": 1e-10},
        "diagnostics": {"candidates": 20, "mixtures": 20, "seed": 1, "random_complement_points": 1}
    })
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin().args(args).arg("--config").arg(config).arg("--out").arg(out).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn run_gibbs_writes_post_burn_in_rows_reproducibly() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["run-gibbs"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["run-gibbs"], &cfg, &b)), 0);
    let trace = fs::read_to_string(a.join("trace.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next().unwrap(), "cycle,block1_dim1,block2_dim1");
    assert_eq!(lines.count(), 2500);
    assert_eq!(trace, fs::read_to_string(b.join("trace.csv")).unwrap());
    let est = json(&a.join("estimates.json"));
    assert_eq!(est["chains"], 1);
    assert_eq!(est["burn_in"], 500);
}

#[test]
fn parallel_chains_write_one_trace_each() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.3));
    let out = tmp.path().join("o");
    let o = bin()
        .args(["run-gibbs", "--parallel-chains", "3", "--seed", "40", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    for k in 1..=3 {
        assert!(out.join(format!("trace_chain{k}.csv")).exists());
    }
    assert_eq!(json(&out.join("estimates.json"))["seeds"], serde_json::json!([40, 41, 42]));
    assert_eq!(code(&run(&["run-gibbs", "--parallel-chains", "0"], &cfg, &out)), 2);
}

#[test]
fn output_directory_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let env_out = tmp.path().join("from_env");
    let o = bin()
        .env("DUALITY_BENCH_OUT", &env_out)
        .arg("run-cavi")
        .arg("--config")
        .arg(&cfg)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(env_out.join("cavi_state.json").exists());

    let flag_out = tmp.path().join("from_flag");
    let o = bin()
        .env("DUALITY_BENCH_OUT", &env_out)
        .arg("run-cavi")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_out)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert!(flag_out.join("cavi_state.json").exists());
}

#[test]
fn missing_field_is_a_config_error_naming_it() {
    let tmp = TempDir::new().unwrap();
    let mut c = bivariate(0.5);
    c["model"].as_object_mut().unwrap().remove("covariance");
    let cfg = write_config(tmp.path(), "c.json", &c);
    let o = run(&["run-gibbs"], &cfg, &tmp.path().join("o"));
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("covariance"));
}

#[test]
fn run_cavi_reaches_the_closed_form_fixed_point() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["run-cavi"], &cfg, &out)), 0);
    let s = json(&out.join("cavi_state.json"));
    assert_eq!(s["converged"], true);
    for f in s["factors"].as_array().unwrap() {
        assert_abs_diff_eq!(f["covariance"][0][0].as_f64().unwrap(), 0.75, epsilon = 1e-9);
    }
}

#[test]
fn unconverged_cavi_still_writes_its_state() {
    let tmp = TempDir::new().unwrap();
    let mut c = bivariate(0.9);
    c["cavi"] = serde_json::json!({"max_cycles": 1, "tolerance": 1e-10, "init": "standard_normal"});
    let cfg = write_config(tmp.path(), "c.json", &c);
    let out = tmp.path().join("o");
    let o = run(&["run-cavi"], &cfg, &out);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stdout).contains("did not converge"));
    assert_eq!(json(&out.join("cavi_state.json"))["converged"], false);

    c["cavi"]["tolerance"] = serde_json::json!(0.0);
    let cfg = write_config(tmp.path(), "bad.json", &c);
    assert_eq!(code(&run(&["run-cavi"], &cfg, &out)), 2);
}

#[test]
fn diagnose_passes_on_the_bivariate_target() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let out = tmp.path().join("o");
    let o = run(&["diagnose"], &cfg, &out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&out.join("report.json"));
    assert_eq!(r["passed"], true);
    assert_eq!(r["blocks"][0]["block"], 1);
    assert_abs_diff_eq!(r["blocks"][0]["squashing_constant"].as_f64().unwrap(), 0.75f64.sqrt(), epsilon = 1e-6);
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn diagnose_flags_a_corrupted_state() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["run-cavi"], &cfg, &out)), 0);
    let mut state = json(&out.join("cavi_state.json"));
    state["factors"][0]["covariance"][0][0] = serde_json::json!(2.0);
    let state_path = write_config(tmp.path(), "state.json", &state);
    let o = bin()
        .arg("diagnose")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--state")
        .arg(&state_path)
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
    let r = json(&out.join("report.json"));
    let failures: Vec<&str> = r["failures"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(failures.iter().any(|f| f.contains("squash_min_slack")), "{failures:?}");
}

#[test]
fn diagnose_mismatched_state_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "c.json", &bivariate(0.5));
    let out = tmp.path().join("o");
    assert_eq!(code(&run(&["run-cavi"], &cfg, &out)), 0);
    let mut state = json(&out.join("cavi_state.json"));
    state["family"] = serde_json::json!("discrete");
    let state_path = write_config(tmp.path(), "state.json", &state);
    let o = bin()
        .arg("diagnose")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .arg("--state")
        .arg(&state_path)
        .output()
        .unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn diagnose_passes_on_the_shipped_discrete_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/discrete_2x3.json");
    let o = run(&["diagnose"], &cfg, tmp.path());
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = json(&tmp.path().join("report.json"));
    assert!(r["kernel"]["stationarity_residual"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn verify_duality_is_reproducible() {
    let tmp = TempDir::new().unwrap();
    let c = serde_json::json!({
        "config_version": 1,
        "model": {"family": "discrete", "shape": [2, 2], "pmf": [0.4, 0.1, 0.2, 0.3]},
        "duality": {"trials": 20, "seed": 3}
    });
    let cfg = write_config(tmp.path(), "c.json", &c);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_eq!(code(&run(&["verify-duality"], &cfg, &a)), 0);
    assert_eq!(code(&run(&["verify-duality"], &cfg, &b)), 0);
    let x = fs::read_to_string(a.join("duality_gaps.csv")).unwrap();
    assert_eq!(x, fs::read_to_string(b.join("duality_gaps.csv")).unwrap());
    assert_eq!(x.lines().next().unwrap(), "trial,family,gap,at_optimum");
    assert_eq!(x.lines().count(), 1 + 2 * 2 * 20);

    let mut c = c;
    c["duality"]["trials"] = serde_json::json!(0);
    let cfg = write_config(tmp.path(), "zero.json", &c);
    assert_eq!(code(&run(&["verify-duality"], &cfg, &a)), 2);
}

#[test]
fn missing_config_file_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = run(&["run-gibbs"], &tmp.path().join("absent.json"), tmp.path());
    assert_eq!(code(&o), 2);
}
