use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> PathBuf {
    PathBuf::from(env!("CARGO_BIN_EXE_sympnf"))
}

fn run(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().expect("spawn sympnf")
}

fn write(dir: &TempDir, name: &str, v: &Value) -> String {
    let p = dir.path().join(name);
    std::fs::write(&p, v.to_string()).unwrap();
    p.to_str().unwrap().to_string()
}

fn matrix(n: usize, rows: Value) -> Value {
    json!({"n": n, "matrix": rows})
}

fn rotation_pair(t1: f64, t2: f64) -> Value {
    // coordinates (x1, x2, y1, y2), one rotation per (x_i, y_i) plane
    let mut m = vec![vec![0.0; 4]; 4];
    for (k, t) in [t1, t2].into_iter().enumerate() {
        let idx = [k, 2 + k];
        let r = [[t.cos(), -t.sin()], [t.sin(), t.cos()]];
        for i in 0..2 {
            for j in 0..2 {
                m[idx[i]][idx[j]] = r[i][j];
            }
        }
    }
    matrix(2, json!(m))
}

fn read(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn analyze_identity_and_shear() {
    let dir = TempDir::new().unwrap();
    let id = write(&dir, "id.json", &matrix(1, json!([1, 0, 0, 1])));
    let out = dir.path().join("r.json");
    let o = run(&["analyze", &id, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let r = read(&out);
    assert_eq!(r["blocks"][0]["case"], "PlusOne");
    assert_eq!(r["blocks"][0]["size_param"], 1);
    assert_eq!(r["blocks"][0]["sign"], 0);

    let shear = write(&dir, "shear.json", &matrix(1, json!([[1, 1], [0, 1]])));
    let o = run(&["analyze", &shear]);
    assert_eq!(o.status.code(), Some(0));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["blocks"][0]["sign"], 1);
    for key in ["A", "N", "P", "blocks", "fingerprint", "residuals", "snap_report", "tolerances"] {
        assert!(r.get(key).is_some(), "missing {key}");
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let bad = write(&dir, "scaled.json", &matrix(1, json!([2, 0, 0, 2])));
    assert_eq!(run(&["analyze", &bad]).status.code(), Some(2));

    let malformed = dir.path().join("broken.json");
    std::fs::write(&malformed, "{\"n\": 1, \"matrix\": [1, 2").unwrap();
    assert_eq!(run(&["analyze", malformed.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(run(&["analyze", "/nonexistent/input.json"]).status.code(), Some(1));
    assert_eq!(run(&["analyze", &bad, "--tol", "-1"]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));

    let close = write(&dir, "close.json", &rotation_pair(0.5, 0.5 + 3e-8));
    assert_eq!(run(&["analyze", &close]).status.code(), Some(3));
}

#[test]
fn compare_reports_first_discrepancy() {
    let dir = TempDir::new().unwrap();
    let shear = write(&dir, "s.json", &matrix(1, json!([1, 1, 0, 1])));
    let neg = write(&dir, "n.json", &matrix(1, json!([1, -1, 0, 1])));
    let id = write(&dir, "i.json", &matrix(1, json!([1, 0, 0, 1])));
    let big = write(&dir, "b.json", &rotation_pair(0.3, 1.2));

    let o = run(&["compare", &shear, &neg]);
    assert_eq!(o.status.code(), Some(4));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(r["conjugate"], false);
    assert_eq!(r["discrepancy"], "Q̂ signature mismatch at λ=1, k=1");

    let o = run(&["compare", &id, &shear]);
    assert_eq!(o.status.code(), Some(4));
    let r: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(r["discrepancy"].as_str().unwrap().starts_with("kernel ladder mismatch"));

    assert_eq!(run(&["compare", &shear, &shear]).status.code(), Some(0));
    assert_eq!(run(&["compare", &shear, &big]).status.code(), Some(1));
}

#[test]
fn generate_then_compare_conjugates() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "blocks": [
            {"case": "UnitNonReal", "lambda": [0.5403023058681398, 0.8414709848078965], "size_param": 1, "sign": -1, "dim": 4},
            {"case": "PlusOne", "lambda": [1.0, 0.0], "size_param": 1, "sign": 1, "dim": 2}
        ],
        "conjugator_seed": 0
    });
    let spec = write(&dir, "spec.json", &spec);
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let a2 = dir.path().join("a2.json");
    for (seed, out) in [("1", &a), ("2", &b), ("1", &a2)] {
        let o = run(&["generate", "--spec", &spec, "--seed", seed, "-o", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&a2).unwrap());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let o = run(&["compare", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));

    let csv = run(&["generate", "--spec", &spec, "--seed", "1", "--format", "csv"]);
    let csv_path = dir.path().join("a.csv");
    std::fs::write(&csv_path, &csv.stdout).unwrap();
    let o = run(&["compare", a.to_str().unwrap(), csv_path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn verify_detects_tampering() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "m.json", &rotation_pair(0.3, 1.2));
    let out = dir.path().join("r.json");
    assert_eq!(run(&["analyze", &input, "-o", out.to_str().unwrap()]).status.code(), Some(0));
    assert_eq!(run(&["verify", out.to_str().unwrap()]).status.code(), Some(0));

    let mut r = read(&out);
    r["P"][0][0] = json!(r["P"][0][0].as_f64().unwrap() + 1e-3);
    let tampered = write(&dir, "t.json", &r);
    assert_eq!(run(&["verify", &tampered]).status.code(), Some(5));

    let mut r = read(&out);
    r["residuals"]["symplecticity"] = json!(0.0);
    let tampered = write(&dir, "t2.json", &r);
    assert_eq!(run(&["verify", &tampered]).status.code(), Some(5));

    let mut r = read(&out);
    r.as_object_mut().unwrap().remove("N");
    let tampered = write(&dir, "t3.json", &r);
    assert_eq!(run(&["verify", &tampered]).status.code(), Some(1));
}

#[test]
fn repeated_analyze_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let input = write(&dir, "m.json", &rotation_pair(0.3, -2.0));
    let outs: Vec<PathBuf> = (0..3).map(|i| dir.path().join(format!("r{i}.json"))).collect();
    for o in &outs {
        assert_eq!(run(&["analyze", &input, "-o", o.to_str().unwrap()]).status.code(), Some(0));
    }
    let first = std::fs::read(&outs[0]).unwrap();
    for o in &outs[1..] {
        assert_eq!(first, std::fs::read(o).unwrap());
    }
    let csv = run(&["analyze", &input, "--format", "csv"]);
    assert_eq!(csv.status.code(), Some(0));
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().filter(|l| l.is_empty()).count(), 1);
}
