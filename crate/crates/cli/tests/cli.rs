use std::io::Write;
use std::process::{Command, Output, Stdio};

use polycond::poly::{read_jsonl, write_jsonl, HomogeneousPoly, PolySystem};

fn run(args: &[&str], stdin: &str) -> Output {
    let mut child = Command::new(env!("CARGO_BIN_EXE_polycond"))
        .args(args)
        .env_remove("POLYCOND_SEED")
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(stdin.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Rows of a CSV as maps from header to field.
fn rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().unwrap().clone();
    r.records()
        .map(|rec| header.iter().zip(rec.unwrap().iter()).map(|(h, v)| (h.to_string(), v.to_string())).collect())
        .collect()
}

#[test]
fn sample_is_deterministic() {
    let args = ["sample", "--n", "3", "--degrees", "2,2,2", "--count", "10", "--seed", "5"];
    let a = run(&args, "");
    let b = run(&args, "");
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    let text = stdout(&a);
    assert_eq!(text.lines().count(), 10);
    let systems = read_jsonl(&text).unwrap();
    assert!(systems.iter().all(|f| f.n() == 3 && f.degrees() == [2, 2, 2]));
    let other = run(&["sample", "--n", "3", "--degrees", "2,2,2", "--count", "10", "--seed", "6"], "");
    assert_ne!(a.stdout, other.stdout);
}

#[test]
fn sample_rejects_a_degree_count_mismatch() {
    let o = run(&["sample", "--n", "3", "--degrees", "2,2"], "");
    assert_eq!(o.status.code(), Some(2));
    assert!(o.stdout.is_empty());
}

#[test]
fn kappa_of_x0x1() {
    let f = PolySystem::new(vec![HomogeneousPoly::from_terms(2, 2, &[(vec![1, 1], 1.0)]).unwrap()]).unwrap();
    let o = run(&["kappa", "--input", "-"], &write_jsonl(&[f]));
    assert_eq!(o.status.code(), Some(0));
    let r = rows(&stdout(&o));
    assert_eq!(r.len(), 1);
    let kt: f64 = r[0]["kappa_tilde"].parse().unwrap();
    assert!((kt - 2f64.sqrt()).abs() < 1e-6, "{kt}");
    assert_eq!(r[0]["kappa"], "");
    assert_eq!(r[0]["certification"], "heuristic");
}

#[test]
fn kappa_on_empty_input_writes_only_the_header() {
    let o = run(&["kappa", "--input", "-"], "");
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("index,n,degrees,kappa_tilde,kappa"));
}

#[test]
fn kappa_both_satisfies_the_sandwich() {
    let sample = run(&["sample", "--n", "3", "--degrees", "2,2,2", "--count", "2", "--seed", "11"], "");
    let o = run(&["kappa", "--input", "-", "--which", "both"], &stdout(&sample));
    assert_eq!(o.status.code(), Some(0));
    for r in rows(&stdout(&o)) {
        let kt: f64 = r["kappa_tilde"].parse().unwrap();
        let k: f64 = r["kappa"].parse().unwrap();
        assert_eq!(r["sandwich_ok"], "true");
        assert!(kt / 3f64.sqrt() <= k * (1.0 + 1e-6) && k <= 6f64.sqrt() * kt * (1.0 + 1e-6));
    }
}

#[test]
fn kappa_rejects_bad_input() {
    assert_eq!(run(&["kappa", "--input", "-"], "not json\n").status.code(), Some(2));
    assert_eq!(run(&["kappa", "--input", "/nonexistent/file.jsonl"], "").status.code(), Some(2));
}

#[test]
fn verify_suites() {
    let o = run(&["verify", "--suite", "matrix", "--trials", "1000"], "");
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));
    let o = run(&["verify", "--suite", "geometry"], "");
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(run(&["verify", "--suite", "nonsense"], "").status.code(), Some(2));
    assert_eq!(run(&["verify", "--suite", "matrix", "--trials", "0"], "").status.code(), Some(2));
}

#[test]
fn experiment_writes_its_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["weyl", "--n", "3", "--degrees", "2,2,2", "--replicates", "200", "--output-dir", out], "");
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(summary["experiment"], "weyl");
    let manifests: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    assert_eq!(manifests.len(), 1);
    let report = run(&["report", manifests[0].to_str().unwrap()], "");
    assert_eq!(report.status.code(), Some(0));
    assert!(stdout(&report).contains("weyl"));
    let missing = run(&["weyl", "--n", "3", "--output-dir", out], "");
    assert_eq!(missing.status.code(), Some(2));
}
