use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const SMALL_SCENE: &str = "frames = 60\nn_points = 1500\n";

fn xview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xview"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = xview(args);
    assert!(
        out.status.success(),
        "xview {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// The machine-readable error line on stderr.
fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .find_map(|l| l.strip_prefix("error: "))
        .unwrap_or_else(|| panic!("no error line in {stderr:?}"));
    serde_json::from_str(line).expect("error line is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

/// Synthesizes the small scene and trains a vocabulary on it.
fn prepared(tmp: &Path) -> (PathBuf, PathBuf) {
    let cfg = write(tmp, "scene.toml", SMALL_SCENE);
    let data = tmp.join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    let vocab_dir = tmp.join("vocab");
    ok(&[
        "vocab",
        "--sequence",
        s(&data.join("cam1.xvff")),
        "--sequence",
        s(&data.join("cam2.xvff")),
        "--depth",
        "4",
        "--out",
        s(&vocab_dir),
    ]);
    (data, vocab_dir.join("vocab.xvvc"))
}

fn read_log(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn statuses(log: &Value) -> Vec<(u64, String)> {
    log["rounds"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["shared"].as_bool().unwrap())
        .map(|r| (r["frame_index"].as_u64().unwrap(), r["reply"]["status"].as_str().unwrap().to_string()))
        .collect()
}

#[test]
fn unknown_config_key_is_named() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "bad.toml", "n_point = 10\n");
    let out = xview(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    let err = error_of(&out);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(err["kind"], "config");
    assert!(err["message"].as_str().unwrap().contains("n_point"), "{err}");
}

#[test]
fn zero_points_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "zero.toml", "n_points = 0\n");
    let err = error_of(&xview(&["synth", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]));
    assert_eq!(err["kind"], "config");
}

#[test]
fn usage_errors_are_machine_readable() {
    let err = error_of(&xview(&["synth"]));
    assert_eq!(err["kind"], "usage");
    assert!(err["message"].as_str().unwrap().contains("--out"), "{err}");
}

#[test]
fn synth_rerun_is_bit_identical_and_seed_matters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scene.toml", SMALL_SCENE);
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    ok(&["synth", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["synth", "--config", s(&cfg), "--out", s(&b)]);
    ok(&["synth", "--config", s(&cfg), "--seed", "9", "--out", s(&c)]);
    let (ta, tb) = (tree(&a), tree(&b));
    // manifests list input paths, which differ only by directory name here
    assert_eq!(ta, tb);
    assert_ne!(fs::read(a.join("cam1.xvff")).unwrap(), fs::read(c.join("cam1.xvff")).unwrap());
    let manifest: Value = serde_json::from_slice(&ta[Path::new("manifest-synth.json")]).unwrap();
    assert_eq!(manifest["seeds"]["scene"], 1);
    assert_eq!(manifest["outputs"].as_array().unwrap().len(), 10);
}

#[test]
fn vocab_is_reproducible_and_rejects_empty_corpus() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, vocab) = prepared(tmp.path());
    let again = tmp.path().join("again");
    ok(&[
        "vocab",
        "--sequence",
        s(&data.join("cam1.xvff")),
        "--sequence",
        s(&data.join("cam2.xvff")),
        "--depth",
        "4",
        "--out",
        s(&again),
    ]);
    assert_eq!(fs::read(&vocab).unwrap(), fs::read(again.join("vocab.xvvc")).unwrap());

    let empty = tmp.path().join("empty.xvff");
    xview::io::write_sequence(&empty, &[]).unwrap();
    let err = error_of(&xview(&["vocab", "--sequence", s(&empty), "--out", s(&tmp.path().join("e"))]));
    assert_eq!(err["kind"], "vocab");
}

#[test]
fn identical_sequences_match_after_initialisation() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, vocab) = prepared(tmp.path());
    let seq = data.join("cam1.xvff");
    let logs = tmp.path().join("logs");
    ok(&["run-pair", "--seq1", s(&seq), "--seq2", s(&seq), "--vocab", s(&vocab), "--out", s(&logs)]);
    let log = read_log(&logs.join("run00/cam1.log.json"));
    let shared = statuses(&log);
    assert_eq!(shared.first().map(|e| e.0), Some(30));
    assert!(shared.iter().all(|(_, st)| st == "MATCH"), "{shared:?}");
    assert_eq!(log["complete"], true);
    assert!(log["manifest"].is_string());
}

#[test]
fn disjoint_scenes_never_match() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "scene.toml", SMALL_SCENE);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["synth", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["synth", "--config", s(&cfg), "--seed", "77", "--out", s(&b)]);
    let (s1, s2) = (a.join("cam1.xvff"), b.join("cam1.xvff"));
    let vocab = tmp.path().join("v");
    ok(&["vocab", "--sequence", s(&s1), "--sequence", s(&s2), "--depth", "4", "--out", s(&vocab)]);
    let logs = tmp.path().join("logs");
    ok(&[
        "run-pair",
        "--seq1",
        s(&s1),
        "--seq2",
        s(&s2),
        "--vocab",
        s(&vocab.join("vocab.xvvc")),
        "--transport",
        "tcp",
        "--out",
        s(&logs),
    ]);
    for cam in [1, 2] {
        let shared = statuses(&read_log(&logs.join(format!("run00/cam{cam}.log.json"))));
        assert_eq!(shared.len(), 6);
        assert!(shared.iter().all(|(_, st)| st == "NO_MATCH"), "{shared:?}");
    }
}

#[test]
fn killed_peer_leaves_flagged_partial_logs() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, vocab) = prepared(tmp.path());
    let logs = tmp.path().join("logs");
    let out = xview(&[
        "run-pair",
        "--seq1",
        s(&data.join("cam1.xvff")),
        "--seq2",
        s(&data.join("cam2.xvff")),
        "--vocab",
        s(&vocab),
        "--abort",
        "2:40",
        "--out",
        s(&logs),
    ]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "session");
    for cam in [1, 2] {
        let log = read_log(&logs.join(format!("run00/cam{cam}.log.json")));
        assert_eq!(log["complete"], false);
        assert!(log["error"].is_string());
        assert!(log["rounds"].as_array().unwrap().len() <= 41);
    }
}

fn valid_pairs(dir: &Path) -> usize {
    fs::read_to_string(dir.join("annotations.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .filter(|l| l.ends_with(",true"))
        .count()
}

#[test]
fn annotate_then_eval_reports_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, vocab) = prepared(tmp.path());
    let (lo, hi) = (tmp.path().join("ann05"), tmp.path().join("ann09"));
    ok(&["annotate", "--data", s(&data), "--out", s(&lo)]);
    ok(&["annotate", "--data", s(&data), "--overlap-threshold", "0.9", "--out", s(&hi)]);
    assert!(valid_pairs(&hi) <= valid_pairs(&lo));
    assert!(valid_pairs(&lo) > 0);
    assert!(lo.join("angle_histogram.csv").exists());

    let logs = tmp.path().join("logs");
    ok(&[
        "run-pair",
        "--seq1",
        s(&data.join("cam1.xvff")),
        "--seq2",
        s(&data.join("cam2.xvff")),
        "--vocab",
        s(&vocab),
        "--runs",
        "2",
        "--out",
        s(&logs),
    ]);
    let report = tmp.path().join("report");
    ok(&[
        "eval",
        "--annotations",
        s(&lo.join("annotations.csv")),
        "--logs",
        s(&logs),
        "--out",
        s(&report),
    ]);
    let csv = fs::read_to_string(report.join("report.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "pair,run,n_queries_cam1,n_queries_cam2,tp,fp,fn,tn,precision,recall,accuracy,manifest"
    );
    assert_eq!(csv.lines().count(), 1 + 2 + 3);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(report.join("manifest-eval.json")).unwrap()).unwrap();
    let hash = manifest["manifest_hash"].as_str().unwrap();
    assert!(lines.all(|l| l.ends_with(hash)));

    fs::remove_file(logs.join("run01/cam2.log.json")).unwrap();
    let err = error_of(&xview(&[
        "eval",
        "--annotations",
        s(&lo.join("annotations.csv")),
        "--logs",
        s(&logs),
        "--out",
        s(&report),
    ]));
    assert_eq!(err["kind"], "io");
    assert!(err["message"].as_str().unwrap().contains("cam2.log.json"));
}

#[test]
fn separate_peer_processes_over_tcp() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, vocab) = prepared(tmp.path());
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let (o1, o2) = (tmp.path().join("p1"), tmp.path().join("p2"));
    let listener = Command::new(env!("CARGO_BIN_EXE_xview"))
        .args([
            "peer", "--camera", "1", "--sequence", s(&data.join("cam1.xvff")), "--vocab", s(&vocab),
            "--listen", &addr, "--out", s(&o1),
        ])
        .spawn()
        .unwrap();
    ok(&[
        "peer", "--camera", "2", "--sequence", s(&data.join("cam2.xvff")), "--vocab", s(&vocab),
        "--connect", &addr, "--out", s(&o2),
    ]);
    assert!(listener.wait_with_output().unwrap().status.success());

    // same session run in one process
    let logs = tmp.path().join("logs");
    ok(&[
        "run-pair",
        "--seq1",
        s(&data.join("cam1.xvff")),
        "--seq2",
        s(&data.join("cam2.xvff")),
        "--vocab",
        s(&vocab),
        "--out",
        s(&logs),
    ]);
    for (cam, dir) in [(1, &o1), (2, &o2)] {
        let mut a = read_log(&dir.join(format!("cam{cam}.log.json")));
        let mut b = read_log(&logs.join(format!("run00/cam{cam}.log.json")));
        a["manifest"] = Value::Null;
        b["manifest"] = Value::Null;
        assert_eq!(a, b);
    }
}

#[test]
fn pipeline_command_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "p.toml", "runs = 2\n[scene]\nframes = 60\nn_points = 1500\n[vocab]\ndepth = 4\n");
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["pipeline", "--config", s(&cfg), "--out", s(&b)]);
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    assert!(ta.contains_key(Path::new("report.csv")));
    assert!(ta.contains_key(Path::new("run01/cam2.log.json")));
}
