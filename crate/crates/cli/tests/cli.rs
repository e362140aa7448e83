use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_msexit");

fn run(dir: &Path, sub: &str, config: &str, extra: &[&str], seed_env: Option<&str>) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    let mut cmd = Command::new(BIN);
    cmd.arg(sub)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .args(extra)
        .env_remove("MSEXIT_SEED");
    if let Some(s) = seed_env {
        cmd.env("MSEXIT_SEED", s);
    }
    cmd.output().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const FLAT_LANGEVIN: &str = r#"{
    "kind": "homogenize",
    "coefficients": {"langevin": {
        "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
        "q": {"type": "constant", "value": 0},
        "d": 0.5
    }},
    "homogenization": {"x_min": -1.0, "x_max": 1.0, "x_points": 9, "n_points": 64}
}"#;

#[test]
fn flat_langevin_homogenizes_to_the_slow_drift() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "homogenize", FLAT_LANGEVIN, &[], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let model = read_json(&dir.path().join("out/model.json"));
    let xs = model["x_grid"].as_array().unwrap();
    let lam = model["lambda_bar"].as_array().unwrap();
    assert_eq!(xs.len(), 9);
    for (x, l) in xs.iter().zip(lam) {
        let (x, l) = (x.as_f64().unwrap(), l.as_f64().unwrap());
        assert!((l + x).abs() < 1e-8, "{x}: {l}");
    }
    assert!(dir.path().join("out/report.json").exists());
    let out = stdout(&o);
    assert!(out
        .lines()
        .any(|l| l.starts_with("PASS max auxiliary residual")));
    assert!(!out.contains("FAIL"));
}

#[test]
fn malformed_json_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "homogenize", "{ \"kind\": ", &[], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn wrong_subcommand_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "fluctuations", FLAT_LANGEVIN, &[], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn uncentered_drift_is_an_invariant_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "kind": "homogenize",
        "coefficients": {"general": {
            "period": 1.0,
            "b": {"type": "constant", "value": 1.0},
            "sigma": {"type": "constant", "value": 1.0}
        }},
        "homogenization": {"x_min": 0.0, "x_max": 1.0, "x_points": 5, "n_points": 64}
    }"#;
    let o = run(dir.path(), "homogenize", cfg, &["--quiet"], None);
    assert_eq!(o.status.code(), Some(4));
    assert!(stdout(&o).is_empty());
    let report = read_json(&dir.path().join("out/report.json"));
    let check = &report["checks"][0];
    assert_eq!(check["name"], "centering residual");
    assert_eq!(check["pass"], false);
    assert!((check["value"].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

/// Pure transport `dX = c(X/δ) dt`: no noise, no extra drift, so the limit
/// fluctuation vanishes and the paths are deterministic.
fn transport_config(mean_abs_tol: f64) -> String {
    format!(
        r#"{{
        "kind": "fluctuation",
        "coefficients": {{"general": {{
            "period": 1.0,
            "c": {{"type": "trig", "mean": 1.0, "cos": [0.5]}},
            "sigma": {{"type": "constant", "value": 0.0}},
            "gamma": 0.0
        }}}},
        "schedule": {{"type": "resonant", "zeta": 0.25}},
        "x0": 0.0,
        "horizon": 1.0,
        "epsilons": [1e-4],
        "n_paths": 100,
        "dt": {{"policy": "explicit", "dt": 1e-5}},
        "homogenization": {{"x_min": -0.5, "x_max": 1.5, "n_points": 256,
                            "tolerances": {{"sigma_min": 0.0}}}},
        "checks": {{"variance_rel_tol": 0.1, "mean_se_factor": 3.0, "mean_abs_tol": {mean_abs_tol}}}
    }}"#
    )
}

#[test]
fn deterministic_fluctuations_follow_the_drift_solution() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "fluctuations",
        &transport_config(5e-3),
        &[],
        None,
    );
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report = read_json(&dir.path().join("out/report.json"));
    let block = &report["blocks"][0];
    assert_eq!(block["prediction"]["mean"].as_f64().unwrap(), 0.0);
    assert_eq!(block["summary"]["variance"].as_f64().unwrap(), 0.0);
}

#[test]
fn unattainable_tolerance_is_a_statistical_failure() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        dir.path(),
        "fluctuations",
        &transport_config(0.0),
        &[],
        None,
    );
    assert_eq!(o.status.code(), Some(5));
    assert!(stdout(&o)
        .lines()
        .any(|l| l.starts_with("FAIL eps=0.0001 mean deviation")));
}

const NOISY: &str = r#"{
    "kind": "fluctuation",
    "coefficients": {"langevin": {
        "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
        "q": {"type": "trig", "cos": [1]},
        "d": 1.0
    }},
    "schedule": {"type": "power", "exponent": 2},
    "x0": 1.0,
    "horizon": 0.2,
    "epsilons": [0.1],
    "n_paths": 20,
    "homogenization": {"x_min": 0.0, "x_max": 1.5, "x_points": 17, "n_points": 128},
    "master_seed": 3
}"#;

#[test]
fn seed_override_changes_only_random_outputs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let oa = run(a.path(), "fluctuations", NOISY, &[], None);
    let ob = run(b.path(), "fluctuations", NOISY, &[], Some("77"));
    let oc = run(
        c.path(),
        "fluctuations",
        NOISY,
        &["--seed", "77"],
        Some("5"),
    );
    for o in [&oa, &ob, &oc] {
        assert_eq!(o.status.code(), Some(0), "{}", stdout(o));
    }
    let file = |d: &Path, f: &str| fs::read(d.join("out").join(f)).unwrap();
    assert_eq!(file(a.path(), "model.json"), file(b.path(), "model.json"));
    assert_ne!(file(a.path(), "samples.csv"), file(b.path(), "samples.csv"));
    // the flag outranks the environment
    assert_eq!(file(b.path(), "samples.csv"), file(c.path(), "samples.csv"));
    let rb = read_json(&b.path().join("out/report.json"));
    assert_eq!(rb["master_seed"], 77);
    let ra = read_json(&a.path().join("out/report.json"));
    assert_eq!(ra["config_hash"], rb["config_hash"]);
    let csv = String::from_utf8(file(a.path(), "samples.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# config "));
    assert_eq!(lines.next().unwrap(), "eps=0.1");
    assert_eq!(lines.count(), 20);
    assert!(!csv.contains('\r'));
}

#[test]
fn bad_seed_environment_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), "fluctuations", NOISY, &[], Some("seven"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn flat_rough_potential_prints_its_variance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "kind": "conditional_exit",
        "rough": {
            "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
            "q": {"type": "constant", "value": 0},
            "d": 1.0,
            "interval": {"lower": 0.5, "upper": 2.0},
            "x0": 1.0
        },
        "epsilons": [0.005],
        "delta": {"rule": "flat"},
        "n_paths": 1000,
        "dt": {"policy": "explicit", "dt": 1e-4},
        "checks": {"variance_rel_tol": 0.15, "rare_fraction_min": 0.99}
    }"#;
    let o = run(dir.path(), "rough-potential", cfg, &[], None);
    let out = stdout(&o);
    assert_eq!(o.status.code(), Some(0), "{out}");
    let var_line = out
        .lines()
        .find(|l| l.starts_with("limit variance = "))
        .unwrap();
    let v: f64 = var_line["limit variance = ".len()..].parse().unwrap();
    assert!((v - 0.75).abs() < 1e-12);
    assert!(out.contains("rare endpoint: upper at x = 2"));
    assert!(out
        .lines()
        .any(|l| l.starts_with("PASS eps=0.005 variance relative error")));
}

#[test]
fn scale_speed_writes_a_monotone_distance_column() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
        "kind": "scale_speed",
        "rough": {
            "v": {"type": "poly", "coeffs": [0, 0, 0.5]},
            "q": {"type": "trig", "cos": [1]},
            "d": 1.0,
            "interval": {"lower": 0.5, "upper": 2.0},
            "x0": 1.0
        },
        "epsilon": 0.05,
        "deltas": [1e-2, 1e-3],
        "grid_points": 31
    }"#;
    let o = run(dir.path(), "scale-speed", cfg, &[], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let csv = fs::read_to_string(dir.path().join("out/samples.csv")).unwrap();
    let mut lines = csv.lines().skip(1);
    assert_eq!(
        lines.next().unwrap(),
        "delta,scale_distance,relative_speed_distance"
    );
    let d: Vec<f64> = lines
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(d.len(), 2);
    assert!(d[1] < d[0], "{d:?}");
}
