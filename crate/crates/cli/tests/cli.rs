use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

struct Run {
    code: i32,
    json: Option<Value>,
    csv: Option<String>,
    stderr: String,
}

fn fermi1d(args: &[&str], config: Option<&str>, env: &[(&str, &str)]) -> Run {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out.json");
    let csv = dir.path().join("out.csv");
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_fermi1d"));
    cmd.args(args);
    if let Some(text) = config {
        let path: PathBuf = dir.path().join("config.json");
        std::fs::write(&path, text).unwrap();
        cmd.arg("--config").arg(path);
    }
    cmd.arg("--out").arg(&out).arg("--csv").arg(&csv);
    for (k, v) in env {
        cmd.env(k, v);
    }
    let Output { status, stderr, .. } = cmd.output().unwrap();
    Run {
        code: status.code().unwrap(),
        json: std::fs::read_to_string(&out).ok().map(|s| serde_json::from_str(&s).unwrap()),
        csv: std::fs::read_to_string(&csv).ok(),
        stderr: String::from_utf8(stderr).unwrap(),
    }
}

fn f64s(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect()
}

#[test]
fn solve_free_neumann_pair() {
    let r = fermi1d(&["solve"], Some(r#"{"n": 400, "particles": 2, "bc": "neumann"}"#), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json.unwrap();
    assert!((j["energy"].as_f64().unwrap() - PI * PI).abs() / (PI * PI) < 1e-3);
    let rho = f64s(&j["density"]);
    assert_eq!(rho.len(), 401);
    let csv = r.csv.unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("x,density,pair_density_diagonal"));
    assert_eq!(lines.count(), 401);
}

#[test]
fn solve_antiperiodic_delta() {
    let cfg = r#"{
        "n": 400, "particles": 1, "bc": "anti_periodic",
        "potential": {"deltas": [{"position": 0.5, "weight": 10.0}]}
    }"#;
    let r = fermi1d(&["solve"], Some(cfg), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning"));
    let j = r.json.unwrap();
    assert!((j["energy"].as_f64().unwrap() - PI * PI).abs() / (PI * PI) < 1e-3);
    assert!(j["pair_density_diagonal"].is_null());
    let x = f64s(&j["x"]);
    let rho = f64s(&j["density"]);
    let err = x
        .iter()
        .zip(&rho)
        .map(|(x, r)| (r - 2.0 * (PI * x).cos().powi(2)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");
}

#[test]
fn csv_uses_twelve_digits() {
    let r = fermi1d(&["solve"], Some(r#"{"n": 50, "k": 4, "particles": 1}"#), &[]);
    let csv = r.csv.unwrap();
    let row = csv.lines().nth(2).unwrap();
    let fields: Vec<&str> = row.split(',').collect();
    assert_eq!(fields[0], "0.020000000000");
    assert!(fields[1].contains('e'));
    assert_eq!(fields[1].split('e').next().unwrap().split('.').nth(1).unwrap().len(), 12);
}

#[test]
fn malformed_delta_position_is_a_validation_error() {
    let cfg = r#"{"n": 100, "potential": {"deltas": [{"position": 1.5, "weight": 1.0}]}}"#;
    let r = fermi1d(&["solve"], Some(cfg), &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("deltas[0]"), "{}", r.stderr);
    assert!(r.json.is_none());
}

#[test]
fn syntax_errors_report_line_and_column() {
    let r = fermi1d(&["solve"], Some("{\"n\": 100,\n  \"potental\": {}}"), &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("line 2 column"), "{}", r.stderr);
    assert!(r.stderr.contains("potental"));
}

#[test]
fn invert_forward_density() {
    let cfg = r#"{
        "n": 200, "k": 8, "particles": 2, "bc": "neumann",
        "interaction": {"kind": "cosine", "k": 1, "strength": 0.5},
        "target": {"kind": "ground_state",
                   "potential": {"terms": [{"kind": "cos_half", "k": 1, "amplitude": 2.0}]}}
    }"#;
    let r = fermi1d(&["invert"], Some(cfg), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json.unwrap();
    assert_eq!(j["converged"], Value::Bool(true));
    assert!(j["final_residual"].as_f64().unwrap() <= 1e-7);
    let x = f64s(&j["x"]);
    let v = f64s(&j["potential_zero_mean"]);
    let err = x
        .iter()
        .zip(&v)
        .map(|(x, v)| (v - 2.0 * (PI * x).cos()).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-3, "{err}");
    assert!(r.csv.unwrap().starts_with("x,potential,target_density\n"));
}

#[test]
fn non_convergence_exits_with_two() {
    let cfg = r#"{
        "n": 100, "k": 6, "particles": 2, "tolerances": {"max_iters": 1},
        "target": {"kind": "ground_state",
                   "potential": {"terms": [{"kind": "cos_half", "k": 1, "amplitude": 5.0}]}}
    }"#;
    let r = fermi1d(&["invert"], Some(cfg), &[]);
    assert_eq!(r.code, 2);
    assert_eq!(r.json.unwrap()["converged"], Value::Bool(false));
}

#[test]
fn parity_rule_and_override() {
    let base = r#"{"n": 100, "k": 6, "particles": 2, "bc": "periodic", "target": {"kind": "uniform"}"#;
    let r = fermi1d(&["invert"], Some(&format!("{base}}}")), &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("parity"));
    let r = fermi1d(&["invert"], Some(&format!("{base}, \"allow_parity_violation\": true}}")), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert!(r.stderr.contains("warning"));
}

#[test]
fn fll_without_interaction_is_t_ks() {
    let cfg = r#"{
        "n": 100, "k": 6, "particles": 2,
        "target": {"kind": "profile", "terms": [{"kind": "constant", "value": 1.0},
                                                {"kind": "cos_half", "k": 1, "amplitude": 0.5}]}
    }"#;
    let r = fermi1d(&["fll"], Some(cfg), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json.unwrap();
    assert_eq!(j["f_ll"].to_string(), j["t_ks"].to_string());
    assert_eq!(j["e_xc"].as_f64(), Some(0.0));
}

#[test]
fn ks_scf_without_interaction_takes_one_step() {
    let cfg = r#"{"n": 100, "k": 6, "particles": 2,
                  "potential": {"terms": [{"kind": "cos_half", "k": 1, "amplitude": 2.0}]}}"#;
    let r = fermi1d(&["ks-scf"], Some(cfg), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json.unwrap();
    assert_eq!(j["converged"], Value::Bool(true));
    assert_eq!(j["iterations"].as_u64(), Some(1));
}

#[test]
fn ks_scf_reproduces_the_many_body_energy() {
    let cfg = r#"{
        "n": 150, "k": 9, "particles": 3, "bc": "periodic",
        "potential": {"terms": [{"kind": "cos", "k": 1, "amplitude": 2.0}]},
        "interaction": {"kind": "cosine", "k": 1, "strength": 0.5}
    }"#;
    let ks = fermi1d(&["ks-scf"], Some(cfg), &[]);
    assert_eq!(ks.code, 0, "{}", ks.stderr);
    let mb = fermi1d(&["solve"], Some(cfg), &[]);
    let (ks, mb) = (ks.json.unwrap(), mb.json.unwrap());
    assert_eq!(ks["aufbau_ok"], Value::Bool(true));
    assert!((ks["total_energy"].as_f64().unwrap() - mb["energy"].as_f64().unwrap()).abs() < 2e-4);
    let diff: f64 = f64s(&ks["density"])
        .iter()
        .zip(f64s(&mb["density"]))
        .map(|(a, b)| (a - b).powi(2) / 150.0)
        .sum();
    assert!(diff.sqrt() < 1e-4);
}

#[test]
fn density_to_slater_roundtrip() {
    let cfg = r#"{
        "n": 200, "particles": 3, "bc": "periodic",
        "target": {"kind": "profile", "terms": [{"kind": "constant", "value": 1.0},
                                                {"kind": "cos", "k": 1, "amplitude": 0.5}]}
    }"#;
    let r = fermi1d(&["density-to-slater"], Some(cfg), &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    let j = r.json.unwrap();
    assert!(j["gram_defect"].as_f64().unwrap() < 1e-8);
    assert!(j["density_rel_l1"].as_f64().unwrap() < 10.0 / (200.0f64 * 200.0));
    assert_eq!(j["orbitals"].as_array().unwrap().len(), 3);
}

#[test]
fn negative_profile_is_rejected() {
    let cfg = r#"{"n": 100, "particles": 1,
                  "target": {"kind": "profile", "terms": [{"kind": "cos_half", "k": 1, "amplitude": 1.0}]}}"#;
    let r = fermi1d(&["density-to-slater"], Some(cfg), &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("negative"));
}

#[test]
fn verify_scenarios_pass() {
    for scenario in ["prop-2.4", "prop-2.7", "monotonicity", "degeneracy", "rearrangement", "k-operator"] {
        let r = fermi1d(&["verify", scenario], Some(r#"{"n": 200}"#), &[]);
        assert_eq!(r.code, 0, "{scenario}: {}", r.stderr);
        let j = r.json.unwrap();
        assert_eq!(j["scenario"], scenario);
        assert_eq!(j["pass"], Value::Bool(true));
        for c in j["checks"].as_array().unwrap() {
            assert!(c["name"].is_string() && c["measured"].is_number() && c["tolerance"].is_number());
        }
    }
}

#[test]
fn verify_prop_2_7_at_default_resolution() {
    let r = fermi1d(&["verify", "prop-2.7"], None, &[]);
    assert_eq!(r.code, 0, "{}", r.stderr);
    assert_eq!(r.json.unwrap()["checks"].as_array().unwrap().len(), 6);
}

#[test]
fn verify_inversion_scenarios() {
    for scenario in ["hk-neumann", "hk-periodic", "necessity"] {
        let r = fermi1d(&["verify", scenario], Some(r#"{"n": 150, "seed": 3}"#), &[("FERMI1D_THREADS", "2")]);
        assert_eq!(r.code, 0, "{scenario}: {}", r.stderr);
    }
}

#[test]
fn unknown_scenario_lists_names() {
    let r = fermi1d(&["verify", "prop-9.9"], None, &[]);
    assert_eq!(r.code, 1);
    assert!(r.stderr.contains("hk-neumann") && r.stderr.contains("k-operator"));
}

#[test]
fn runs_are_deterministic() {
    let cfg = r#"{"n": 120, "seed": 11}"#;
    let a = fermi1d(&["verify", "monotonicity"], Some(cfg), &[]);
    let b = fermi1d(&["verify", "monotonicity"], Some(cfg), &[("FERMI1D_THREADS", "1")]);
    assert_eq!(a.json, b.json);
}

#[test]
fn bad_thread_count_is_rejected() {
    let r = fermi1d(&["verify", "prop-2.4"], None, &[("FERMI1D_THREADS", "0")]);
    assert_eq!(r.code, 1);
}
