use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn reshuffle(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reshuffle")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn manifest(dir: &Path) -> Vec<Value> {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str::<Value>(&text).unwrap().as_array().unwrap().clone()
}

fn number_after(text: &str, key: &str) -> f64 {
    let rest = &text[text.find(key).unwrap_or_else(|| panic!("{key} in {text}")) + key.len()..];
    rest.split(|c: char| c == ',' || c == ';' || c.is_whitespace())
        .find(|s| !s.is_empty())
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn pi_routes_agree() {
    let dir = tempfile::tempdir().unwrap();
    let o = reshuffle(&["pi", "--B", "3", "--route", "both", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let gap = number_after(&stdout(&o), "max discrepancy");
    assert!(gap <= 1e-11, "{gap}");
    let files: Vec<String> = manifest(dir.path()).iter().map(|e| e["file"].as_str().unwrap().to_string()).collect();
    assert!(files.contains(&"pi.csv".to_string()));
}

#[test]
fn spectrum_reports_the_overparameterized_atom() {
    let dir = tempfile::tempdir().unwrap();
    let o = reshuffle(&["spectrum", "--gamma", "1.5", "--alpha", "0.2", "--out", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{o:?}");
    let atom = number_after(&stdout(&o), "two-batch");
    assert!((atom - 1.0 / 3.0).abs() < 0.01, "{atom}");
    let side: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("spectrum_two_batch.json")).unwrap()).unwrap();
    assert!((side["point_mass"].as_f64().unwrap() - 1.0 / 3.0).abs() < 0.01);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let bad = d.join("bad.json");
    std::fs::write(&bad, "{\n  \"name\": \"x\",\n  \"preset\": \"fig1_under\",\n  \"extra\": 1\n}\n").unwrap();
    let o = reshuffle(&["--config", bad.to_str().unwrap(), "--out", d.join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 4"));

    let o = reshuffle(&["risk", "--B", "7", "--out", d.join("b").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    // gamma = 1 has a hard edge the quadrature cannot normalize.
    let o = reshuffle(&["spectrum", "--gamma", "1", "--alpha", "0.2", "--out", d.join("c").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("NormalizationFailure"));
}

#[test]
fn exact_on_a_saved_problem_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let prob = d.join("problem.bin");
    let base = ["exact", "--B", "2", "--alpha", "0.1", "--epochs", "50"];
    let mut first: Vec<&str> = base.to_vec();
    let out1 = d.join("one");
    first.extend(["--sigma2", "0.1", "--save-problem", prob.to_str().unwrap(), "--out", out1.to_str().unwrap()]);
    assert!(reshuffle(&first).status.success());
    let mut second: Vec<&str> = base.to_vec();
    let out2 = d.join("two");
    second.extend(["--problem", prob.to_str().unwrap(), "--out", out2.to_str().unwrap()]);
    assert!(reshuffle(&second).status.success());
    assert_eq!(manifest(&out1), manifest(&out2));
    let csv = std::fs::read_to_string(out1.join("exact.csv")).unwrap();
    assert_eq!(csv.lines().count(), 52);
    assert!(csv.lines().nth(1).unwrap().contains("reshuffle_exact_mean"));
}

#[test]
fn config_runs_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("cfg.json");
    std::fs::write(
        &cfg,
        r#"{
  "name": "demo",
  "problem": {"n": 60, "p": 20, "sigma": {"ar1": 0.4}, "sigma2": 0.2, "seed": 3},
  "methods": [
    {"kind": "simulate", "B": 3, "alpha": 0.05, "epochs": 10, "trials": 4},
    {"kind": "exact", "B": 3, "alpha": 0.05, "epochs": 10},
    {"kind": "risk", "B": 2, "alpha": 0.05, "epochs": 10, "bounds": true}
  ]
}"#,
    )
    .unwrap();
    let run = |out: &str| {
        let o = reshuffle(&["--config", cfg.to_str().unwrap(), "--out", d.join(out).to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
        manifest(&d.join(out))
    };
    let (a, b) = (run("a"), run("b"));
    assert_eq!(a.len(), 3);
    assert_eq!(a, b);
    let single = reshuffle(&["--workers", "1", "--config", cfg.to_str().unwrap(), "--out", d.join("c").to_str().unwrap()]);
    assert!(single.status.success());
    assert_eq!(manifest(&d.join("c")), a);
}

#[test]
fn preset_output_is_byte_identical_and_tagged() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let run = |out: &str| {
        let o = reshuffle(&["preset", "fig1_over", "--out", d.join(out).to_str().unwrap()]);
        assert!(o.status.success(), "{o:?}");
        manifest(&d.join(out))
    };
    let a = run("a");
    assert_eq!(a, run("b"));
    for e in &a {
        assert_eq!(e["preset"], "fig1_over");
        assert_eq!(e["caption_ref"], "Figure 1b");
        let name = e["file"].as_str().unwrap();
        if name.ends_with(".csv") {
            let text = std::fs::read_to_string(d.join("a").join(name)).unwrap();
            assert!(text.starts_with("# preset: fig1_over\n# caption_ref: Figure 1b\n"), "{name}");
        }
    }
    let summary: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("a/fig1_over_summary.json")).unwrap()).unwrap();
    assert!(summary["ks_two_batch"].as_f64().unwrap() < 0.05);
}
