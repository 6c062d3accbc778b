use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dflsim::SimConfig;
use tempfile::TempDir;

const SMALL: &str = r#"{
    "topology": {"kind": "erdos_renyi", "n": 6, "p": 0.5, "seed": 4},
    "dataset": {"synthetic": {"n_per_class": 30, "test_per_class": 10,
                 "num_classes": 3, "feature_dim": 6, "spread": 0.15}},
    "strategy": {"kind": ["Isolation", "DecDiffVT", "CFAGE"]},
    "training": {"hidden": [8], "eta": 0.05, "batch_size": 8},
    "run": {"rounds": 5, "replicas": 2, "master_seed": 1}
}"#;

fn dflsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dflsim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path
}

fn run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--config", config.to_str().unwrap(), "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dflsim(&args)
}

#[test]
fn reruns_and_thread_counts_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let outs: Vec<PathBuf> = ["a", "b", "c"].iter().map(|d| tmp.path().join(d)).collect();
    for (out, threads) in outs.iter().zip(["1", "1", "4"]) {
        let o = run(&cfg, out, &["--threads", threads]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for file in ["rounds.csv", "summary.json"] {
        let a = fs::read(outs[0].join(file)).unwrap();
        assert_eq!(a, fs::read(outs[1].join(file)).unwrap(), "{file} differs between reruns");
        assert_eq!(a, fs::read(outs[2].join(file)).unwrap(), "{file} differs across thread counts");
    }
}

#[test]
fn rounds_csv_shape() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let text = fs::read_to_string(out.join("rounds.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "replica,round,node,strategy,accuracy,test_ce_loss,comm_floats_sent,gini"
    );
    // strategies x replicas x (T + 1) x nodes
    assert_eq!(lines.count(), 3 * 2 * 6 * 6);
    assert!(text.contains(",CFAGE,"));
}

#[test]
fn summary_and_manifest_reproduce_the_run() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let first = tmp.path().join("first");
    assert!(run(&cfg, &first, &["--seed-override", "99"]).status.success());

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["run"]["master_seed"], 99);
    let s = &summary["strategies"]["DecDiffVT"];
    assert!(s["final_avg_accuracy"].is_f64());
    assert!(s["characteristic_times"].as_object().unwrap().contains_key("95"));
    assert_eq!(s["replicas"][0]["node_quantiles"].as_object().unwrap().len(), 5);

    for source in ["summary.json", "manifest.json"] {
        let again = tmp.path().join(format!("from-{source}"));
        let o = run(&first.join(source), &again, &[]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(
            fs::read(first.join("rounds.csv")).unwrap(),
            fs::read(again.join("rounds.csv")).unwrap(),
            "rerun from {source}"
        );
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["gini"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["outputs"]["rounds"], "rounds.csv");
}

#[test]
fn eval_rebuilds_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("out");
    assert!(run(&cfg, &out, &[]).status.success());
    let rebuilt = tmp.path().join("rebuilt.json");
    let o = dflsim(&[
        "eval",
        "--rounds",
        out.join("rounds.csv").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        rebuilt.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read(out.join("summary.json")).unwrap(), fs::read(rebuilt).unwrap());
}

#[test]
fn config_errors_name_the_field() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &SMALL.replace("\"eta\"", "\"etta\""));
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("training.etta"), "{}", stderr(&o));

    let cfg = write_config(tmp.path(), &SMALL.replace("\"rounds\": 5", "\"rounds\": -5"));
    let o = run(&cfg, &tmp.path().join("out"), &[]);
    assert!(stderr(&o).contains("run.rounds"), "{}", stderr(&o));
}

#[test]
fn missing_dataset_fails_cleanly() {
    let tmp = TempDir::new().unwrap();
    let text = SMALL.replace(
        r#"{"synthetic": {"n_per_class": 30, "test_per_class": 10,
                 "num_classes": 3, "feature_dim": 6, "spread": 0.15}}"#,
        r#"{"idx": {"train_images": "nope/a", "train_labels": "nope/b",
                    "test_images": "nope/c", "test_labels": "nope/d"}}"#,
    );
    let cfg = write_config(tmp.path(), &text);
    let out = tmp.path().join("out");
    let o = run(&cfg, &out, &[]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("not found"), "{}", stderr(&o));
    assert!(!out.join("rounds.csv").exists());
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["mnist-mlp.json", "desk-synthetic.json"] {
        let text = fs::read_to_string(dir.join(name)).unwrap();
        let cfg = SimConfig::from_json(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(cfg.allocation.alpha, 1.26);
    }
    let mnist = SimConfig::from_json(&fs::read_to_string(dir.join("mnist-mlp.json")).unwrap()).unwrap();
    assert_eq!(mnist.hidden_dims(), vec![512, 256, 128]);
    assert_eq!((mnist.training.eta, mnist.training.mu), (0.001, 0.5));
    assert_eq!(mnist.topology.n, Some(50));
}

#[test]
fn gen_graph() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g.json");
    let o = dflsim(&["gen-graph", "--kind", "er", "--n", "50", "--p", "0.2", "--seed", "3", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("nodes: 50"));
    let topo = dflsim::Topology::from_json(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(topo.node_count(), 50);

    let o = dflsim(&["gen-graph", "--kind", "ba", "--n", "50", "--m", "2"]);
    assert!(stdout(&o).contains("connected: true"));
    assert!(stdout(&o).contains("edges: 97"), "{}", stdout(&o));

    let o = dflsim(&["gen-graph", "--kind", "er", "--n", "5", "--p", "1.5"]);
    assert!(!o.status.success());
}

#[test]
fn allocate() {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a.json"), tmp.path().join("b.json"));
    for out in [&a, &b] {
        let o = dflsim(&["allocate", "--synthetic", "50", "--n", "5", "--seed", "8", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("gini: "));
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let o = dflsim(&["allocate", "--synthetic", "50", "--n", "1"]);
    assert!(stdout(&o).contains("gini: 0.0000"));

    let o = dflsim(&["allocate", "--synthetic", "3", "--n", "5"]);
    assert!(!o.status.success());
}
