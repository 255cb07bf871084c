use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn ufhlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ufhlab"))
        .args(args)
        .env_remove("UFHLAB_OUT")
        .output()
        .expect("binary runs")
}

fn config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn minimal(technique: &str, extra: &str) -> String {
    format!(
        r#"{{
  "schema_version": 1,
  "space": {{"kind": "program"}},
  "evolution": {{"population_size": 25, "tournament_size": 2, "candidates": 500,
                 "technique": {{"kind": "{technique}"}}}},
  "seeds": [0]{extra}
}}"#
    )
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_writes_four_files_and_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "run.json", &minimal("none", ""));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = ufhlab(&["run", "--config", s(&cfg), "--out", s(out)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let mut files: Vec<String> =
        fs::read_dir(a.join("seed_0")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    files.sort();
    assert_eq!(files, ["config.json", "events.jsonl", "summary.json", "timecourse.csv"]);
    let csv = |d: &Path| fs::read(d.join("seed_0/timecourse.csv")).unwrap();
    assert_eq!(csv(&a), csv(&b));
    let header = String::from_utf8(csv(&a)).unwrap();
    assert!(header.starts_with("virtual_time_s,step,best_fitness,event,population_best\n"));
    assert_eq!(header.lines().count(), 501);
    let resolved: Value = serde_json::from_slice(&fs::read(a.join("seed_0/config.json")).unwrap()).unwrap();
    assert_eq!(resolved["schema_version"], 1);
}

#[test]
fn seeds_override_and_output_precedence() {
    let tmp = TempDir::new().unwrap();
    let from_config = tmp.path().join("from_config");
    let body = minimal("fec", &format!(r#", "output_dir": "{}""#, s(&from_config)));
    let cfg = config(tmp.path(), "run.json", &body);
    let o = ufhlab(&["run", "--config", s(&cfg), "--seeds", "3,4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(from_config.join("seed_3/summary.json").exists());
    assert!(from_config.join("seed_4/summary.json").exists());
    assert!(!from_config.join("seed_0").exists());

    let cfg = config(tmp.path(), "plain.json", &minimal("none", ""));
    let env_root = tmp.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_ufhlab"))
        .args(["run", "--config", s(&cfg)])
        .env("UFHLAB_OUT", &env_root)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(env_root.join("seed_0/timecourse.csv").exists());
}

#[test]
fn validation_failures_exit_2() {
    let tmp = TempDir::new().unwrap();
    let bad = minimal("none", "").replace("\"tournament_size\": 2", "\"tournament_size\": 30");
    let cfg = config(tmp.path(), "bad.json", &bad);
    let o = ufhlab(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("tournament_size"));

    let unknown = minimal("none", r#", "budget": 5"#);
    let cfg = config(tmp.path(), "unknown.json", &unknown);
    let o = ufhlab(&["run", "--config", s(&cfg), "--out", s(tmp.path())]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("budget") && err.contains("line"), "{err}");

    let empty_axis = minimal("none", r#", "sweep": {"m_bits": []}"#).replace("[0]", "[0, 1]");
    let cfg = config(tmp.path(), "sweep.json", &empty_axis);
    assert_eq!(ufhlab(&["sweep", "--config", s(&cfg), "--out", s(tmp.path())]).status.code(), Some(2));

    let cfg = config(tmp.path(), "cf.json", &minimal("none", ""));
    assert_eq!(ufhlab(&["counterfactual", "--config", s(&cfg), "--out", s(tmp.path())]).status.code(), Some(2));
}

#[test]
fn io_failure_exits_3() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "run.json", &minimal("none", ""));
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = ufhlab(&["run", "--config", s(&cfg), "--out", s(&blocker)]);
    assert_eq!(o.status.code(), Some(3));
    let o = ufhlab(&["run", "--config", s(&tmp.path().join("missing.json"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn sweep_writes_aggregate_tables() {
    let tmp = TempDir::new().unwrap();
    let body = minimal(
        "none",
        r#", "sweep": {"population_size": [10, 20], "tournament_size": [2, 5],
                        "techniques": [{"kind": "none"}, {"kind": "fec"}]}"#,
    )
    .replace("[0]", "[0, 1]")
    .replace("\"candidates\": 500", "\"candidates\": 100");
    let cfg = config(tmp.path(), "sweep.json", &body);
    let out = tmp.path().join("sweep");
    let o = ufhlab(&["sweep", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = fs::read_to_string(out.join("records.jsonl")).unwrap();
    assert_eq!(records.lines().count(), 16);
    for line in records.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        for key in ["config_id", "seed", "auc", "hit_fraction", "collision_rate"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
    assert_eq!(fs::read_to_string(out.join("aggregate.csv")).unwrap().lines().count(), 1 + 8);
    assert_eq!(fs::read_to_string(out.join("scatter.csv")).unwrap().lines().count(), 1 + 4);
    assert!(out.join("p10_t2_m24/fec/seed_1/summary.json").exists());
}

fn counterfactual(body: &str) -> Value {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "cf.json", body);
    let out = tmp.path().join("cf");
    let o = ufhlab(&["counterfactual", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&fs::read(out.join("counterfactual.json")).unwrap()).unwrap()
}

#[test]
fn counterfactual_collision_rates() {
    let exact = counterfactual(&minimal("fec", r#", "hash": {"m_bits": 52}"#));
    assert!(exact["checks"].as_u64().unwrap() > 0);
    assert_eq!(exact["collision_rate"].as_f64(), Some(0.0), "{exact}");

    let coarse = minimal("fec", r#", "hash": {"m_bits": 2}"#)
        .replace("\"population_size\": 25, \"tournament_size\": 2, \"candidates\": 500", "\"population_size\": 100, \"tournament_size\": 10, \"candidates\": 5000")
        .replace("[0]", "[0, 1, 2, 3]");
    let coarse = counterfactual(&coarse);
    assert!(coarse["collision_rate"].as_f64().unwrap() > 0.0, "{coarse}");
}

#[test]
fn replay_round_trip() {
    let tmp = TempDir::new().unwrap();
    let cfg = config(tmp.path(), "run.json", &minimal("fec", ""));
    let out = tmp.path().join("out");
    assert!(ufhlab(&["run", "--config", s(&cfg), "--out", s(&out)]).status.success());
    let summary_path = out.join("seed_0/summary.json");
    let summary: Value = serde_json::from_slice(&fs::read(&summary_path).unwrap()).unwrap();
    let resolved = out.join("seed_0/config.json");

    let o = ufhlab(&["replay", "--config", s(&resolved), "--candidate", s(&summary_path)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let logged = summary["final_fitness"].as_f64().unwrap();
    assert!((report["fitness"].as_f64().unwrap() - logged).abs() <= 1e-12);
    assert_eq!(report["hash"], summary["best_candidate_hash"]);

    let o = ufhlab(&["replay", "--config", s(&resolved), "--candidate", s(&summary_path), "--data-seed", "77"]);
    assert!(o.status.success());
    let unseen: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(unseen["fitness"].as_f64().unwrap().is_finite());
    assert_eq!(unseen["data_seed"], 77);

    let broken = r#"{"forward": [{"op": "scalar_add", "in": [0, 99], "out": 1}]}"#;
    let path = config(tmp.path(), "broken.json", broken);
    let o = ufhlab(&["replay", "--config", s(&resolved), "--candidate", s(&path)]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}
