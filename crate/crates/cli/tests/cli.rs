use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn ldas(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ldas")).args(args).current_dir(cwd).output().unwrap()
}

fn ok(args: &[&str], cwd: &Path) {
    let out = ldas(args, cwd);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn error_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().rev().find(|l| l.starts_with('{')).expect("error JSON on stderr");
    serde_json::from_str(line).unwrap()
}

const QUICK: [&str; 6] = ["--iterations", "200", "--burn-in", "50", "--thin", "5"];

fn simulate(dir: &Path) {
    ok(&["simulate", "data", "--k", "2", "--n", "800", "--outcome-slopes", "0.1,0.05", "--seed", "5", "--out", "sim"], dir);
}

fn fit(dir: &Path, out: &str, extra: &[&str]) {
    let mut args = vec!["fit", "--data", "sim/data.csv", "--schema", "sim/schema.json", "--out", out];
    args.extend(QUICK);
    args.extend(extra);
    ok(&args, dir);
}

#[test]
fn same_seed_gives_identical_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    fit(d, "a", &["--k", "2", "--seed", "7"]);
    fit(d, "b", &["--k", "2", "--seed", "7"]);
    fit(d, "c", &["--k", "2", "--seed", "8"]);
    let read = |dir: &str| std::fs::read(d.join(dir).join("draws.csv")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));

    let meta = json(&d.join("a/draws_meta.json"));
    assert_eq!(meta["n_snapshots"], (200 - 50) / 5);
}

#[test]
fn chains_multiply_snapshots() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    fit(d, "fit", &["--k", "2", "--chains", "3"]);
    let rows = std::fs::read_to_string(d.join("fit/draws.csv")).unwrap();
    let chains: std::collections::BTreeSet<&str> =
        rows.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(chains.len(), 3);
}

#[test]
fn k_above_bound_is_warned_in_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    // 5 groups, 4 questions with 5 categories: the bound is 4
    fit(d, "fit", &["--k", "5"]);
    let m = json(&d.join("fit/manifest.json"));
    let warnings = m["warnings"].as_array().unwrap();
    assert!(warnings.iter().any(|w| w.as_str().unwrap().contains("bound 4")), "{warnings:?}");
    assert_eq!(m["command"], "fit");
    assert!(m["inputs"].as_object().unwrap().contains_key("sim/data.csv"));
}

#[test]
fn bad_values_produce_error_json() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    let data = std::fs::read_to_string(d.join("sim/data.csv")).unwrap();
    let mut lines: Vec<String> = data.lines().map(String::from).collect();
    let mut cells: Vec<String> = lines[3].split(',').map(String::from).collect();
    cells[2] = "banana".into();
    lines[3] = cells.join(",");
    std::fs::write(d.join("sim/bad.csv"), lines.join("\n") + "\n").unwrap();

    let out = ldas(&["fit", "--data", "sim/bad.csv", "--schema", "sim/schema.json", "--k", "2", "--out", "x"], d);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["row"], 3);
    assert!(e["error"]["message"].as_str().unwrap().contains("banana"));

    let out = ldas(&["fit", "--k", "2"], d);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

#[test]
fn rank_deficient_design_names_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let mut data = String::from("id,y,x\n");
    let mut membership = String::from("id,group,type_1,type_2\n");
    for i in 0..20 {
        data.push_str(&format!("{i},{},{}\n", i % 7, i % 3));
        membership.push_str(&format!("{i},1,0,1\n"));
    }
    std::fs::write(d.join("data.csv"), data).unwrap();
    std::fs::write(d.join("m.csv"), membership).unwrap();
    let out = ldas(&["regress", "--data", "data.csv", "--membership", "m.csv", "--outcome", "y", "--treatment", "x", "--out", "r"], d);
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["columns"], serde_json::json!(["Z1", "x:Z1"]));
}

#[test]
fn select_reports_dimensions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    let mut args = vec!["select", "--data", "sim/data.csv", "--schema", "sim/schema.json", "--k-max", "1", "--out", "sel"];
    args.extend(QUICK);
    ok(&args, d);
    let r = json(&d.join("sel/selection.json"));
    assert_eq!(r["recommended_k"], 1);
    assert_eq!(r["n_groups"], 5);
    assert_eq!(r["n_questions"], 4);
    assert_eq!(r["total_categories"], 20);
    assert_eq!(r["k_max_counting"], 4);
    let ev: Vec<f64> = r["eigenvalues"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(ev.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    simulate(d);
    fit(d, "fit", &["--k", "3"]);
    ok(&["summarize", "--draws", "fit", "--compare", "1,2", "--out", "sum"], d);
    ok(&["regress", "--data", "sim/outcome.csv", "--membership", "sum/membership.csv", "--outcome", "y", "--treatment", "x", "--controls", "w", "--out", "reg"], d);

    let est = json(&d.join("sum/estimates.json"));
    let beta = est["estimates"]["beta_mean"].as_array().unwrap();
    assert_eq!(beta.len(), 4);
    for q in beta {
        for row in q.as_array().unwrap() {
            let s: f64 = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }
    let membership = std::fs::read_to_string(d.join("sum/membership.csv")).unwrap();
    assert_eq!(membership.lines().count(), 801);
    assert_eq!(std::fs::read_to_string(d.join("sum/divergence.csv")).unwrap().lines().count(), 5);

    let coef = std::fs::read_to_string(d.join("reg/coefficients.csv")).unwrap();
    assert_eq!(coef.lines().filter(|l| l.starts_with("x:Z")).count(), 2);
    let returns = std::fs::read_to_string(d.join("reg/returns.csv")).unwrap();
    assert_eq!(returns.lines().count(), 4);
    let m = json(&d.join("reg/manifest.json"));
    assert!(!m["notes"].as_array().unwrap().is_empty());
}

#[test]
fn rerun_refuses_changed_inputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("s.csv"), "month,a,b,c,d,e\n1,100,100,100,100,100\n").unwrap();
    ok(&["ics", "--scores", "s.csv", "--out", "ics"], d);
    std::fs::write(d.join("s.csv"), "month,a,b,c,d,e\n1,90,100,100,100,100\n").unwrap();
    let out = ldas(&["rerun", "--manifest", "ics/manifest.json", "--out", "again"], d);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "input_changed");
}
