use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_qdiff");

fn model_file(dir: &Path, name: &str, u: f64, divisor: (f64, f64)) -> PathBuf {
    let blocks = if u == 0.0 {
        "{}".to_string()
    } else {
        format!(r#"{{"(1,2)": {{"lo": 0, "hi": 0, "coeffs": [[[{u:?}, 0.0]]]}}}}"#)
    };
    let text = format!(
        r#"{{
  "format": 1,
  "q": {{"re": 3.0, "im": 0.0}},
  "window": 40,
  "tol": 1e-10,
  "shape": {{"slopes": [0, -1], "ranks": [1, 1], "constants": [[[1.0, 0.0]], [[1.0, 0.0]]]}},
  "blocks": {blocks},
  "divisors": [[{{"re": {:?}, "im": {:?}, "mult": 1}}]],
  "seed": 3
}}"#,
        divisor.0, divisor.1
    );
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

fn json_of(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("certificate on stdout")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn normal_form_of_the_model_is_its_invariant() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "t.json", 1.0, (1.3, 0.8));
    let normal = dir.path().join("normal.json");
    let out = run(&["normal-form", p(&f), "--normal", p(&normal)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let nf: Value = serde_json::from_str(&std::fs::read_to_string(&normal).unwrap()).unwrap();
    let v = &nf["blocks"]["(1,2)"];
    assert_eq!(v["lo"], 0);
    assert_eq!(v["hi"], 0);
    assert!((v["coeffs"][0][0][0].as_f64().unwrap() - 1.0).abs() < 1e-12);
    let cert = json_of(&out);
    assert_eq!(cert["format"], 1);
    assert_eq!(cert["command"], "normal-form");
}

#[test]
fn graded_input_has_identity_gauge_and_zero_normal_form() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "a0.json", 0.0, (1.3, 0.8));
    let out = run(&["normal-form", p(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let cert = json_of(&out);
    let verdicts: Vec<&str> = cert["verdicts"].as_array().unwrap().iter().map(|v| v.as_str().unwrap()).collect();
    assert!(verdicts.contains(&"V = 0") && verdicts.contains(&"identity gauge"), "{verdicts:?}");
    let out = run(&["sum", p(&f)]);
    assert_eq!(out.status.code(), Some(0));
    let cert = json_of(&out);
    assert_eq!(cert["verdicts"][0], "identity gauge");
    let entry = &cert["data"]["table"][0]["F"];
    assert_eq!(entry[0][1][0].as_f64().unwrap(), 0.0);
    let out = run(&["cocycle", p(&f)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validation_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "t.json", 1.0, (1.3, 0.8));
    let out = run(&["normal-form", p(&f), "--q-re", "0.5"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("must exceed"));
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert_eq!(run(&["check", p(&bad)]).status.code(), Some(2));
    assert_eq!(run(&["check", p(&dir.path().join("missing.json"))]).status.code(), Some(2));
}

#[test]
fn prohibited_divisor_is_refused_with_a_witness() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "t.json", 1.0, (-1.0, 0.0));
    let out = run(&["sum", p(&f)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("not allowed") && err.contains("blocks (1,2)"), "{err}");
}

#[test]
fn summation_certificate_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "t.json", 1.0, (1.3, 0.8));
    let cert = dir.path().join("sum.json");
    let out = run(&["sum", p(&f), "--output", p(&cert)]);
    assert_eq!(out.status.code(), Some(0));
    let c: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    assert!(c["checks"][0]["value"].as_f64().unwrap() <= 1e-7);
    assert_eq!(c["grid"]["points"].as_array().unwrap().len(), 60);
    let csv = std::fs::read_to_string(dir.path().join("sum.csv")).unwrap();
    assert!(csv.starts_with("name,value,tol,pass\nsummation residual,"));
}

#[test]
fn classification_of_model_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let t = model_file(dir.path(), "t.json", 1.0, (1.3, 0.8));
    let a0 = model_file(dir.path(), "a0.json", 0.0, (1.3, 0.8));
    let out = run(&["classify", p(&t), p(&a0)]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json_of(&out)["verdicts"][0], "not equivalent");
    let out = run(&["classify", p(&t), p(&t)]);
    let cert = json_of(&out);
    assert_eq!(cert["verdicts"][0], "equivalent");
    assert_eq!(cert["verdicts"][1], "identity gauge");
}

#[test]
fn generation_is_reproducible_and_planted_pairs_are_equivalent() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let partner = dir.path().join("partner.json");
    let args = ["gen", "--slopes", "2,1,0", "--ranks", "1,2,1", "--divisors", "2", "--seed", "9"];
    assert_eq!(run(&[&args[..], &["--output", p(&a)]].concat()).status.code(), Some(0));
    assert_eq!(run(&[&args[..], &["--output", p(&b), "--planted", p(&partner)]].concat()).status.code(), Some(0));
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let gen: Value = serde_json::from_slice(&ta).unwrap();
    assert_eq!(gen["shape"]["slopes"], serde_json::json!([2, 1, 0]));
    assert_eq!(gen["shape"]["ranks"], serde_json::json!([1, 2, 1]));
    let out = run(&["classify", p(&a), p(&partner)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json_of(&out)["verdicts"][0], "equivalent");
    let out = run(&["check", p(&a)]);
    assert_eq!(out.status.code(), Some(0));
    let out = run(&["cocycle", p(&a)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cert = json_of(&out);
    assert_eq!(cert["data"]["flatness"].as_array().unwrap().len(), 3);
}

#[test]
fn exit_codes_are_stable_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let f = model_file(dir.path(), "t.json", 1.0, (-1.0, 0.0));
    let codes: Vec<Option<i32>> = (0..3).map(|_| run(&["sum", p(&f), "--seed", "4"]).status.code()).collect();
    assert_eq!(codes, vec![Some(3); 3]);
}
