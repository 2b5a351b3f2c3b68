use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn nearby(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nearby")).args(args).output().expect("binary runs")
}

fn json_ok(args: &[&str]) -> Value {
    let out = nearby(args);
    assert!(out.status.success(), "{:?}: {}", args, String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn error_kind(args: &[&str]) -> String {
    let out = nearby(args);
    assert_eq!(out.status.code(), Some(2), "{:?}", args);
    let v: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    v["error"]["kind"].as_str().unwrap().to_string()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn mult_three_sites() {
    let v = json_ok(&["mult", "3"]);
    assert_eq!(v["schema"], "nearby.mult/1");
    assert_eq!(v["multiplicities"], serde_json::json!({"1/2": "2", "3/2": "1"}));
    assert_eq!(v["total_dimension"], "8");
}

#[test]
fn mult_csv_and_out_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    let out = nearby(&["mult", "4", "--format", "csv", "--out", path.to_str().unwrap()]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(path).unwrap();
    assert_eq!(text.lines().next(), Some("spin,two_lambda,multiplicity"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn output_is_deterministic() {
    let a = nearby(&["verify", "--suite", "2"]);
    let b = nearby(&["verify", "--suite", "2"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn irrep_defaults_to_csv() {
    let out = nearby(&["irrep", "3/2"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("chain_id,position,diagonal,weight"));
    assert_eq!(lines.count(), 4);
    let v = json_ok(&["irrep", "1", "--format", "json"]);
    assert!(v.is_object());
}

#[test]
fn errors_are_json_with_exit_two() {
    assert_eq!(error_kind(&["ogata", "0"]), "domain");
    assert_eq!(error_kind(&["verify", "--suite", "12"]), "input");
    let dir = tempfile::tempdir().unwrap();
    let w = write(dir.path(), "w.json", r#"{"schema":"other/1","weights":[1]}"#);
    assert_eq!(error_kind(&["berg", "--weights", &w]), "input");
}

#[test]
fn fixtures_hold() {
    for args in [
        vec!["fixtures", "choi", "--n", "6"],
        vec!["fixtures", "voiculescu", "--n", "6"],
        vec!["fixtures", "phillips", "--a", "1,0", "--b", "0,1", "--c", "0.5,0"],
    ] {
        let v = json_ok(&args);
        assert_eq!(v["holds"], true, "{:?}: {}", args, v);
    }
}

#[test]
fn berg_on_a_weights_file() {
    let dir = tempfile::tempdir().unwrap();
    let open = write(dir.path(), "w.json", r#"{"schema":"nearby.weights/1","weights":[0.1,0.3,[0.2,0.1],0.4]}"#);
    let closed = write(dir.path(), "c.json", r#"{"schema":"nearby.weights/1","weights":[1.0,1.01,[0.0,1.02],1.01],"closing":1.0}"#);
    let runs: [&[&str]; 3] = [
        &["berg", "--weights", &open, "--mode", "cubic"],
        &["berg", "--weights", &closed, "--mode", "sigma"],
        &["berg", "--weights", &closed, "--mode", "grid", "--grid", "4", "--sigma", "1.0"],
    ];
    for args in runs {
        let v = json_ok(args);
        assert_eq!(v["schema"], "nearby.berg/1");
        assert_eq!(v["holds"], true, "{:?}: {}", args, v);
    }
    // a unilateral shift has a zero arrow, so no σ > 0 bounds it
    assert_eq!(error_kind(&["berg", "--weights", &open, "--mode", "sigma"]), "domain");
}

#[test]
fn gep_on_an_irrep_family() {
    let dir = tempfile::tempdir().unwrap();
    let f = write(dir.path(), "f.json", r#"{"schema":"nearby.family/1","two_lambda":[10,12],"n":40}"#);
    let w = write(dir.path(), "w.json", r#"{"schema":"nearby.windows/1","cuts":[-0.15,0.0,0.15],"n":2}"#);
    let v = json_ok(&["gep", "--family", &f, "--windows", &w]);
    assert_eq!(v["schema"], "nearby.gep/1");
    assert_eq!(v["dim"], 24);
    assert_eq!(v["holds"], true);
    assert!(v["measured"]["commutator_a_s_double"].as_f64().unwrap() < 1e-12);
    let short = write(dir.path(), "s.json", r#"{"schema":"nearby.windows/1","cuts":[-0.15,-0.05,0.05,0.15],"n":2}"#);
    assert_eq!(error_kind(&["gep", "--family", &f, "--windows", &short]), "domain");
}

#[test]
fn ogata_plan_at_1e15() {
    let v = json_ok(&["ogata", "1000000000000000", "--plan-only"]);
    let h = v["headline_bounds"]["sigma12"].as_f64().unwrap();
    assert!((h - 0.04524).abs() < 1e-5, "{}", h);
    assert!(v["bounds"]["sigma12"].as_f64().unwrap() <= h);
}

#[test]
fn ogata_small_build_is_measured() {
    let v = json_ok(&["ogata", "12"]);
    assert_eq!(v["all_within"], true, "{}", v);
}

#[test]
fn verify_one_criterion() {
    let v = json_ok(&["verify", "--suite", "1"]);
    assert_eq!(v["schema"], "nearby.verify/1");
}
