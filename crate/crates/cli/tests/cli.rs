use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phbt_core::dynamics::{scattering_probabilities, DeviceParams};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_phbt"))
}

fn bundled(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(out.status.success(), "{args:?}: {stderr}");
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.trim_end().lines().count(), 1, "stdout must be one line: {stdout}");
    serde_json::from_str(&stdout).unwrap()
}

fn assert_schema(name: &str, v: &Value) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("schemas").join(format!("{name}.schema.json"));
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap();
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{name}: {errors:?}\n{v}");
}

fn f(v: &Value, key: &str) -> f64 {
    v[key].as_f64().unwrap_or_else(|| panic!("missing {key} in {v}"))
}

/// Small, fast scenario with bright detectors for record round trips.
fn small_config(dir: &TempDir, cycles: u64) -> PathBuf {
    let path = dir.path().join("small.json");
    let cfg = serde_json::json!({
        "schema": 1,
        "schedule": { "pump_energy_fJ": 27, "read_energy_fJ": 924, "delay_ns": 115 },
        "heating": { "n_init": 0.2, "bath_n": 0.2 },
        "detectors": [ { "eta": 0.25 }, { "eta": 0.25 } ],
        "run": {
            "n_cycles": cycles, "seed": 7, "dim": 20, "classes": 3, "tol": 1e-8,
            "herald_policy": "d1", "delta_n": 0, "splitter_ratio": 0.5,
            "max_cycles": 100000000, "n_heralds": 1200000
        }
    });
    std::fs::write(&path, cfg.to_string()).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn ideal_config_predicts_four_p_b() {
    let v = ok_json(&["predict", "--config", s(&bundled("paper_ideal.json"))]);
    assert_schema("predict", &v);
    let g2 = f(&v, "g2");
    assert!((0.9 * 0.048..=1.1 * 0.048).contains(&g2), "{g2}");
    assert_eq!(v["params_echo"]["schedule"]["pump_p_b"], 0.012);
}

#[test]
fn main_config_lands_in_model_band() {
    let v = ok_json(&["predict", "--config", s(&bundled("paper_main.json")), "--click"]);
    assert_schema("predict", &v);
    assert!((0.70..=0.82).contains(&f(&v, "g2")), "{v}");
    assert!((f(&v, "heralded_occupation") - 1.575).abs() < 1e-3);
}

#[test]
fn delayed_config_loads() {
    let v = ok_json(&["predict", "--config", s(&bundled("paper_delayed.json"))]);
    assert_schema("predict", &v);
    let main = ok_json(&["predict", "--config", s(&bundled("paper_main.json"))]);
    // more heating before a later read
    assert!(f(&v, "g2") > f(&main, "g2"));
}

#[test]
fn predict_is_idempotent() {
    let a = run(&["predict", "--config", s(&bundled("paper_ideal.json"))]);
    let b = run(&["predict", "--config", s(&bundled("paper_ideal.json"))]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn config_errors_exit_two_with_field_path() {
    let dir = TempDir::new().unwrap();
    let cases = [
        (r#"{"schema":1,"schedule":{"pump_energy_fJ":-5,"read_energy_fJ":924,"delay_ns":115}}"#, "schedule.pump_energy_fJ"),
        (r#"{"schema":1,"schedule":{"pump_energy_fJ":5,"read_energy_fJ":924,"delay_ns":115,"extra":1}}"#, "schedule.extra"),
        (r#"{"schema":2,"schedule":{"pump_energy_fJ":5,"read_energy_fJ":924,"delay_ns":115}}"#, "schema"),
        (r#"{"schema":1,"schedule":{"pump_energy_fJ":5,"pump_p_b":0.01,"read_energy_fJ":924,"delay_ns":115}}"#, "pump_p_b"),
        (r#"{"schema":1,"schedule":{"pump_energy_fJ":5,"read_energy_fJ":924,"delay_ns":115},"detectors":[{"eta":1.5},{"eta":0.1}]}"#, "detectors[0].eta"),
        (r#"{"schema":1,"schedule":{"pump_energy_fJ":5,"read_energy_fJ":924,"delay_ns":115},"heating":{"influx":[{"onset":"later","rate_per_us":1}]}}"#, "heating.influx[0].onset"),
    ];
    for (i, (text, needle)) in cases.iter().enumerate() {
        let path = dir.path().join(format!("bad{i}.json"));
        std::fs::write(&path, text).unwrap();
        let out = run(&["predict", "--config", s(&path)]);
        assert_eq!(out.status.code(), Some(2), "{text}");
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(stderr.contains(needle), "{needle} not in {stderr}");
        assert!(out.stdout.is_empty());
    }
}

#[test]
fn io_errors_exit_four() {
    let out = run(&["predict", "--config", "/definitely/not/here.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(&["calibrate", "--config", s(&bundled("sm_calibration.json")), "--out", "/definitely/not/here/out.json"]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(&["estimate", "--record", "/definitely/not/here.csv"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn numeric_failure_exits_three() {
    // a dark pump never heralds
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("dark.json");
    std::fs::write(&path, r#"{"schema":1,"schedule":{"pump_energy_fJ":0,"read_energy_fJ":924,"delay_ns":115}}"#).unwrap();
    let out = run(&["predict", "--config", s(&path)]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn calibrate_published_inputs() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cal.json");
    let v = ok_json(&["calibrate", "--config", s(&bundled("sm_calibration.json")), "--out", s(&out)]);
    assert_schema("calibrate", &v);
    assert!((f(&v, "g0_over_2pi_kHz") - 869.0).abs() < 20.0, "{v}");
    assert!((f(&v, "n_th") - 0.104).abs() < 0.002);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
    assert_eq!(written, v);
}

#[test]
fn gaussian_bound_published_values() {
    let v = ok_json(&["gaussian-bound", "--n-init", "0.20"]);
    assert_schema("gaussian_bound", &v);
    assert!((f(&v, "g2_min") - 0.95).abs() < 0.01, "{v}");
    let w = ok_json(&["gaussian-bound", "--n-init", "0.20", "--window", "1.25,1.9"]);
    assert_schema("gaussian_bound", &w);
    assert!((f(&w, "g2_min") - 0.99).abs() < 0.01, "{w}");
    // n_init read from a scenario file
    let c = ok_json(&["gaussian-bound", "--config", s(&bundled("paper_main.json"))]);
    assert_eq!(f(&c, "g2_min"), f(&v, "g2_min"));
    assert_eq!(run(&["gaussian-bound", "--n-init", "0.2", "--window", "2,1"]).status.code(), Some(2));
}

#[test]
fn simulate_is_deterministic_and_capped() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, 100_000);
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let va = ok_json(&["simulate", "--config", s(&cfg), "--out", s(&a)]);
    assert_schema("simulate", &va);
    ok_json(&["simulate", "--config", s(&cfg), "--out", s(&b)]);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let other = dir.path().join("c.csv");
    ok_json(&["simulate", "--config", s(&cfg), "--out", s(&other), "--seed", "8"]);
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&other).unwrap());

    let out = run(&["simulate", "--config", s(&cfg), "--out", s(&a), "--cycles", "7000000000"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cap"));
    assert_eq!(run(&["simulate", "--config", s(&cfg)]).status.code(), Some(2));
}

#[test]
fn paper_heralds_match_closed_form_rate() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("paper.csv");
    let n = 10_000_000u64;
    let v = ok_json(&["simulate", "--config", s(&bundled("paper_main.json")), "--out", s(&out), "--cycles", &n.to_string()]);
    let (p_b, _) = scattering_probabilities(&DeviceParams::paper(), 27e-15).unwrap();
    let expected = 0.0116 * p_b * (1.0 + 0.20) * n as f64;
    let got = v["heralds"][0].as_f64().unwrap();
    assert!((got - expected).abs() < 3.0 * expected.sqrt(), "{got} vs {expected}");
}

#[test]
fn estimate_closes_the_loop() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, 2_000_000);
    let rec = dir.path().join("rec.csv");
    ok_json(&["simulate", "--config", s(&cfg), "--out", s(&rec)]);
    let e = ok_json(&["estimate", "--record", s(&rec)]);
    assert_schema("estimate", &e);
    let p = ok_json(&["predict", "--config", s(&cfg), "--click"]);
    let truth = f(&p["click"], "g2");
    let g2 = f(&e, "g2");
    assert!(g2 - 3.0 * f(&e, "sigma_minus") <= truth && truth <= g2 + 3.0 * f(&e, "sigma_plus"), "{g2} vs {truth}");

    // same windows whether they come from the sidecar or the config
    let with_cfg = ok_json(&["estimate", "--record", s(&rec), "--config", s(&cfg)]);
    assert_eq!(with_cfg, e);
    let any = ok_json(&["estimate", "--record", s(&rec), "--policy", "any"]);
    assert!(any["n_heralds"].as_u64() > e["n_heralds"].as_u64());
}

#[test]
fn sweeps_write_fixed_columns() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir, 2_000_000);
    let csv = dir.path().join("n.csv");
    let v = ok_json(&["sweep", "--config", s(&cfg), "--axis", "n-init", "--values", "0,0.2,1", "--out", s(&csv), "--dim", "40"]);
    assert_schema("sweep", &v);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("axis_value,g2,sigma_minus,sigma_plus"));
    let g2: Vec<f64> = lines.map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(g2.len(), 3);
    assert!(g2[0] < g2[1] && g2[1] < g2[2], "{g2:?}");

    let d = ok_json(&["sweep", "--config", s(&cfg), "--axis", "delta-n", "--values", "-1,0,1", "--mode", "simulate"]);
    assert_schema("sweep", &d);
    for row in d["rows"].as_array().unwrap() {
        if f(row, "axis_value") != 0.0 {
            let g = f(row, "g2");
            assert!((g - 1.0).abs() < 3.0 * f(row, "sigma_minus").max(f(row, "sigma_plus")), "{row}");
        }
    }
    let out = run(&["sweep", "--config", s(&cfg), "--axis", "delta-n", "--values", "1"]);
    assert_eq!(out.status.code(), Some(2));
}
