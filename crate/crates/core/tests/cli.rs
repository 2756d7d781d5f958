//! End-to-end runs of the `mpccl` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mpccl::graphdata::save_graph;
use mpccl::synth::{generate, SynthSpec};

fn mpccl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mpccl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!(
            "stdout is not JSON ({e}): {}\nstderr: {}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn small_graph(dir: &Path) {
    let spec = SynthSpec {
        name: "small".into(),
        class_sizes: vec![20, 20, 20],
        n_features: 30,
        mean_words: 5.0,
        n_edges: 150,
        homophily: 0.85,
        topic_fraction: 0.6,
        degree_exponent: 2.5,
    };
    save_graph(&generate(&spec, 5).unwrap(), dir).unwrap();
}

fn small_config(dir: &Path, extra: &str) -> String {
    let path = dir.join("small.toml");
    let body = format!(
        "scales = [0.5, 0.25]\nn_min = 4\ndims = [16, 16, 16, 8]\npretrain_epochs = 3\nepochs = 4\nkmeans_restarts = 2\n{extra}"
    );
    fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

#[test]
fn eval_identical_files_scores_one() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("labels.csv");
    fs::write(&f, "0\n1\n1\n2\n0\n").unwrap();
    let f = f.to_string_lossy();
    let out = mpccl(&["eval", "--pred", &f, "--truth", &f]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    for key in ["acc", "nmi", "ari", "f1"] {
        assert_eq!(v[key].as_f64(), Some(1.0), "{key}");
    }
}

#[test]
fn eval_reports_are_byte_stable() {
    let dir = tempfile::tempdir().unwrap();
    let (p, t) = (dir.path().join("p.csv"), dir.path().join("t.csv"));
    fs::write(&p, "node,cluster\n0,1\n1,1\n2,0\n3,2\n").unwrap();
    fs::write(&t, "0\n1\n1\n1\n").unwrap();
    let args = ["eval", "--pred", p.to_str().unwrap(), "--truth", t.to_str().unwrap()];
    let (a, b) = (mpccl(&args), mpccl(&args));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(json(&a)["n_samples"], 4);
}

#[test]
fn eval_length_mismatch_fails() {
    let dir = tempfile::tempdir().unwrap();
    let (p, t) = (dir.path().join("p.csv"), dir.path().join("t.csv"));
    fs::write(&p, "0\n1\n").unwrap();
    fs::write(&t, "0\n1\n1\n").unwrap();
    let out = mpccl(&["eval", "--pred", p.to_str().unwrap(), "--truth", t.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_flag_is_usage_error() {
    let out = mpccl(&["eval", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
    assert_eq!(mpccl(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn invalid_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    small_graph(dir.path());
    let cfg = small_config(dir.path(), "mask_p = 1.5\n");
    let out = mpccl(&["train", "--config", &cfg, "--input", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(dir.path().join("typo.toml"), "learning_rte = 0.1\n").unwrap();
    let out = mpccl(&["train", "--config", dir.path().join("typo.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    small_graph(dir.path());
    let cfg = small_config(dir.path(), "learning_rate = 1e300\npretrain_learning_rate = 1e300\n");
    let res = dir.path().join("res");
    let out = mpccl(&[
        "train",
        "--config",
        &cfg,
        "--input",
        dir.path().to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn train_writes_labels_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    small_graph(dir.path());
    let cfg = small_config(dir.path(), "");
    let res = dir.path().join("res");
    let out = mpccl(&[
        "train",
        "--config",
        &cfg,
        "--input",
        dir.path().to_str().unwrap(),
        "--out",
        res.to_str().unwrap(),
        "--repeats",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let labels = fs::read_to_string(res.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().count(), 60);
    assert!(res.join("labels_seed1.csv").exists());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(res.join("metrics.json")).unwrap()).unwrap();
    for key in ["acc", "nmi", "ari", "f1"] {
        assert!(report["metrics"][key].is_f64(), "{key}");
        assert_eq!(report["summary"][key]["values"].as_array().unwrap().len(), 2);
    }
    let history = report["runs"][0]["result"]["history"].as_array().unwrap();
    assert_eq!(history.len(), 4);
    assert!(history[0]["loss"]["total"].is_f64());
}

#[test]
fn coarsen_writes_every_scale() {
    let dir = tempfile::tempdir().unwrap();
    small_graph(dir.path());
    let out_dir = dir.path().join("coarse");
    let out = mpccl(&[
        "coarsen",
        "--input",
        dir.path().to_str().unwrap(),
        "--scales",
        "0.5,0.2",
        "--min-nodes",
        "4",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let levels = json(&out)["levels"].as_array().unwrap().clone();
    assert_eq!(levels[0]["n_nodes"], 30);
    assert_eq!(levels[1]["n_nodes"], 12);
    for tag in ["0.5", "0.2"] {
        let map = fs::read_to_string(out_dir.join(format!("coarse_{tag}_map.csv"))).unwrap();
        assert_eq!(map.lines().count(), 60);
        assert!(out_dir.join(format!("coarse_{tag}_edges.csv")).exists());
    }
}

#[test]
fn spectral_report_passes() {
    let dir = tempfile::tempdir().unwrap();
    small_graph(dir.path());
    let report = dir.path().join("spectral.json");
    let out = mpccl(&[
        "verify-spectral",
        "--input",
        dir.path().to_str().unwrap(),
        "--scales",
        "0.5",
        "--min-nodes",
        "4",
        "--report",
        report.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert_eq!(v["reports"][0]["report"]["interlacing_ok"], true);
    assert!(report.exists());
}

#[test]
fn gradcheck_seed_seven_passes() {
    let out = mpccl(&["gradcheck", "--seed", "7"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
}

#[test]
fn thread_variable_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("l.csv");
    fs::write(&f, "0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mpccl"))
        .args(["eval", "--pred", f.to_str().unwrap(), "--truth", f.to_str().unwrap()])
        .env("MPCCL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
