use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn mvlabel(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mvlabel")).args(args).output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn simulate(dir: &Path, seed: &str, episodes: &str) {
    ok(&mvlabel(&["--seed", seed, "--jobs", "1", "simulate", "--episodes", episodes, "--views", "8", "--out", p(dir)]));
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn maps(report: &Value) -> Vec<f64> {
    report["two_d"].as_array().unwrap().iter().map(|r| r["map"].as_f64().unwrap_or(f64::NAN)).collect()
}

#[test]
fn simulate_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate(&a, "11", "2");
    simulate(&b, "11", "2");
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.keys().any(|k| k.ends_with("manifest.json")));
    assert_eq!(ta, tb);
}

#[test]
fn zero_episodes_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mvlabel(&["simulate", "--episodes", "0", "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"simulate": {"episodez": 3}}"#).unwrap();
    let out = mvlabel(&["--config", p(&cfg), "simulate", "--out", p(&tmp.path().join("d"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("episodez"));
}

#[test]
fn config_file_merges_under_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("c.json");
    std::fs::write(&cfg, r#"{"simulate": {"episodes": 5, "policy": {"n_views": 4}}}"#).unwrap();
    let data = tmp.path().join("d");
    ok(&mvlabel(&["--config", p(&cfg), "simulate", "--episodes", "1", "--out", p(&data)]));
    let summary = read_json(&data.join("simulation.json"));
    assert_eq!(summary["episodes"].as_array().unwrap().len(), 1);
    let manifest = read_json(&data.join("ep_000/manifest.json"));
    assert_eq!(manifest["frames"].as_array().unwrap().len(), 4);
}

#[test]
fn missing_input_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mvlabel(&["generate", "--data", p(&tmp.path().join("nope")), "--out", p(tmp.path())]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "5", "2");

    let labels = tmp.path().join("labels");
    ok(&mvlabel(&["--seed", "1", "generate", "--data", p(&data), "--out", p(&labels)]));
    assert!(labels.join("labels_2d.json").is_file() && labels.join("labels_3d.json").is_file());

    let report = tmp.path().join("report.json");
    ok(&mvlabel(&["eval", "--labels", p(&labels), "--gt", p(&data), "--sweep", "--out", p(&report)]));
    let r = read_json(&report);
    assert!(maps(&r).iter().all(|m| *m > 0.5), "{:?}", maps(&r));
    assert!(r["three_d"]["map"].as_f64().is_some());
    // Raising the confidence threshold never adds predictions.
    let counts: Vec<u64> = r["sweep"].as_array().unwrap().iter().map(|s| s["tp"].as_u64().unwrap() + s["fp"].as_u64().unwrap()).collect();
    assert_eq!(counts.len(), 11);
    assert!(counts.windows(2).all(|w| w[1] <= w[0]), "{counts:?}");

    // Ground truth scored against itself.
    let selfr = tmp.path().join("self.json");
    ok(&mvlabel(&["eval", "--labels", p(&data.join("gt_2d.json")), "--gt", p(&data), "--iou", "0.5,0.75,0.95", "--out", p(&selfr)]));
    assert_eq!(maps(&read_json(&selfr)), vec![1.0, 1.0, 1.0]);

    // No predictions at all.
    let mut empty = read_json(&data.join("gt_2d.json"));
    empty["annotations"] = Value::Array(vec![]);
    let empty_path = tmp.path().join("empty.json");
    std::fs::write(&empty_path, empty.to_string()).unwrap();
    let er = tmp.path().join("empty_report.json");
    ok(&mvlabel(&["eval", "--labels", p(&empty_path), "--gt", p(&data), "--out", p(&er)]));
    assert!(maps(&read_json(&er)).iter().all(|m| *m == 0.0));
}

#[test]
fn view_subsampling_and_weak_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "5", "2");

    let sub = tmp.path().join("sub");
    ok(&mvlabel(&["--seed", "2", "generate", "--data", p(&data), "--out", p(&sub), "--views", "5"]));
    let summary = read_json(&sub.join("summary.json"));
    for e in summary["episodes"].as_array().unwrap() {
        let used: Vec<u64> = e["views_used"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
        assert_eq!(used.len(), 5);
        assert!(used.windows(2).all(|w| w[0] < w[1]));
    }
    let again = tmp.path().join("again");
    ok(&mvlabel(&["--seed", "2", "generate", "--data", p(&data), "--out", p(&again), "--views", "5"]));
    assert_eq!(tree(&sub), tree(&again));

    let weak = tmp.path().join("weak");
    ok(&mvlabel(&["generate", "--data", p(&data), "--out", p(&weak), "--weak-seed", "--aggregate-votes", "--crf-iterations", "3"]));
    let summary = read_json(&weak.join("summary.json"));
    let sidecar = read_json(&data.join("ep_000/gt.json"));
    let first = &summary["episodes"][0];
    assert_eq!(first["ok"], Value::Bool(true));
    assert_eq!(first["seed_class"], sidecar["target_class"]);
}

#[test]
fn refine_poses_writes_filtered_episodes() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    simulate(&data, "5", "1");
    let out = tmp.path().join("refined");
    ok(&mvlabel(&["refine-poses", "--data", p(&data), "--out", p(&out)]));
    let summary = read_json(&out.join("refine.json"));
    let first = &summary[0];
    assert_eq!(first["ok"], Value::Bool(true));
    let retained = first["retained"].as_array().unwrap().len();
    let manifest = read_json(&out.join("ep_000/manifest.json"));
    assert_eq!(manifest["frames"].as_array().unwrap().len(), retained);
    // The refined corpus can be labelled in turn.
    ok(&mvlabel(&["generate", "--data", p(&out), "--out", p(&tmp.path().join("labels"))]));
}
