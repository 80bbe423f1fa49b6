use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn k3h(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_k3h")).args(args).env_remove("K3H_GUARD_BITS").output().expect("run k3h")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

#[test]
fn surface_check_succeeds() {
    let out = k3h(&["surface", "check"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["planted"]["finite_orbit_on_surface"], true);
    assert_eq!(v["hash"].as_str().unwrap().len(), 64);
}

#[test]
fn converged_height_exits_zero() {
    let out = k3h(&["height", "--alpha", "cusp:1", "--point", "planted:0", "--tol", "1e-3"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    assert_eq!(v["converged"], true);
    assert!(v["value"].as_f64().unwrap() > 0.0);
}

#[test]
fn malformed_point_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.json");
    fs::write(&path, r#"{"x":["1","0"],"y":"oops","z":["1","1"]}"#).unwrap();
    let out = k3h(&["height", "--alpha", "cusp:1", "--point", path.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("point") && err.contains('y'), "{err}");
}

#[test]
fn bad_alpha_is_an_input_error() {
    let out = k3h(&["height", "--alpha", "cusp:9", "--point", "planted:0"]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha"));
}

#[test]
fn starved_budget_exits_two() {
    let out = k3h(&["height", "--alpha", "irr:1,0.3,0.2", "--point", "planted:0", "--max-letters", "2", "--tol", "1e-12"]);
    assert_eq!(code(&out), 2);
    assert_eq!(stdout_json(&out)["converged"], false);
}

#[test]
fn broken_gram_fails_verification() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lattice.json");
    fs::write(&path, r#"{"rank":3,"gram":[[0,2,3],[2,0,2],[3,2,0]],"ample":[1,1,1]}"#).unwrap();
    let out = k3h(&["verify", "--suite", "lattice", "--lattice", path.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert_eq!(k3h(&["verify", "--suite", "lattice"]).status.code(), Some(0));
}

fn starset(out: &Path) -> Output {
    k3h(&["starset", "--point", "planted:0", "--tol", "1e-2", "--samples", "64", "--out", out.to_str().unwrap()])
}

#[test]
fn starset_csv_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let first = starset(&a);
    let second = starset(&b);
    assert!(matches!(code(&first), 0 | 2));
    assert_eq!(code(&first), code(&second));
    let bytes = fs::read(&a).unwrap();
    assert_eq!(bytes, fs::read(&b).unwrap());
    let text = String::from_utf8(bytes).unwrap();
    assert!(text.starts_with("theta,"));
    assert_eq!(text.lines().count(), 65);
}

#[test]
fn orbit_reports_growing_points() {
    let out = k3h(&["orbit", "--point", "planted:0", "--word", "1,2,3"]);
    assert_eq!(code(&out), 0);
    let v = stdout_json(&out);
    let pts = v["points"].as_array().unwrap();
    assert_eq!(pts.len(), 4);
    assert!(pts[3]["bits"].as_u64() > pts[0]["bits"].as_u64());
}
