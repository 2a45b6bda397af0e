use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const GOLDEN: &str = r#"{
  "solenoid": {
    "transversal": { "kind": "circle" },
    "map": { "kind": "rotation", "real": 0.6180339887498949 }
  },
  "immersion": { "kind": "rotation_standard" },
  "forms": [ { "dtheta": 2 } ],
  "random_forms": { "count": 2 },
  "dualform": { "r": 0.05, "G": 32 }
}"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("config.json");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_solenoid"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("out/report.json")).unwrap()).unwrap()
}

#[test]
fn golden_homology_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), GOLDEN, &["homology"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/homology.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|s| s.parse().unwrap()).collect();
    assert!((row[0] - 1.0).abs() < 1e-10);
    assert!((row[1] - 0.6180339887498949).abs() < 1e-10);
    let rep = report(dir.path());
    assert_eq!(rep["command"], "homology");
    assert_eq!(rep["config"]["invariance_tol"], 1e-9);
}

#[test]
fn pair_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(d.path(), GOLDEN, &["pair", "--seed", "7", "--threads", "1"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    for f in ["pair.csv", "report.json"] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs between runs");
    }
    let csv = fs::read_to_string(a.path().join("out/pair.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn seed_changes_random_forms() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run(a.path(), GOLDEN, &["pair", "--seed", "1"]);
    run(b.path(), GOLDEN, &["pair", "--seed", "2"]);
    let x = fs::read_to_string(a.path().join("out/pair.csv")).unwrap();
    let y = fs::read_to_string(b.path().join("out/pair.csv")).unwrap();
    assert_ne!(x, y);
}

#[test]
fn bad_prime_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"solenoid":{"transversal":{"kind":"cantor","p":1,"depth":3},"map":{"kind":"odometer","p":1}}}"#;
    let out = run(dir.path(), cfg, &["build"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("transversal.p"));
}

#[test]
fn unknown_field_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), r#"{"solenoidd": {}}"#, &["build"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn non_invariant_measure_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "solenoid": {"transversal": {"kind": "circle"}, "map": {"kind": "rotation", "real": 0.6180339887498949}},
      "measure": {"density": {"const": 1.0, "cos": [0.5]}},
      "immersion": {"kind": "rotation_standard"}
    }"#;
    let out = run(dir.path(), cfg, &["homology"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn build_reports_cantor_type() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{"solenoid":{"transversal":{"kind":"cantor","p":2,"depth":5},"map":{"kind":"odometer","p":2}}}"#;
    let out = run(dir.path(), cfg, &["build"]);
    assert!(out.status.success());
    let rep = report(dir.path());
    assert_eq!(rep["results"]["transversal"], "CantorSet");
    assert_eq!(rep["results"]["minimal"], true);
}

#[test]
fn dualform_writes_grid_and_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), GOLDEN, &["dualform"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/dualform.csv")).unwrap();
    // header plus 2 components on a 32x32 grid
    assert_eq!(csv.lines().count(), 1 + 2 * 32 * 32);
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/dualform.json")).unwrap()).unwrap();
    assert_eq!(meta["resolution"], 32);
    let rep = report(dir.path());
    assert!(rep["results"]["check"]["max_rel_error"].as_f64().unwrap() < 1e-3);
}

#[test]
fn decompose_splits_atom() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = r#"{
      "solenoid": {"transversal": {"kind": "circle"}, "map": {"kind": "rotation", "rational": [0, 1]}},
      "solenoid_measure": {"daval": {"density": {"const": 0.7}}, "atoms": [{"x": 0.25, "t": 0.5, "mass": 0.3}]}
    }"#;
    let out = run(dir.path(), cfg, &["decompose"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/decompose.csv")).unwrap();
    let mass = |comp: &str, kind: &str| -> f64 {
        csv.lines()
            .map(|l| l.split(',').collect::<Vec<_>>())
            .find(|r| r[0] == comp && r[1] == kind)
            .map(|r| r[2].parse().unwrap())
            .unwrap()
    };
    assert!((mass("regular", "daval") - 0.7).abs() < 1e-12);
    assert!((mass("irregular", "point_atom") - 0.3).abs() < 1e-12);
    assert_eq!(mass("irregular", "daval"), 0.0);
}

#[test]
fn acceptance_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), "{}", &["acceptance"]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 9);
    let all_pass = lines.iter().all(|l| l.starts_with("PASS"));
    assert_eq!(out.status.code(), Some(if all_pass { 0 } else { 3 }));
    assert!(dir.path().join("out/acceptance.csv").exists());
}
