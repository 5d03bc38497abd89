use std::fs;
use std::path::Path;

use decavg::config::ExperimentConfig;
use decavg::engine::{inspect, load_data, run_experiment, run_replicate, simulate};
use decavg::metrics::{mean_std, parse_per_node_csv, parse_summary_csv};

fn config(out: &Path, extra: &str) -> ExperimentConfig {
    let text = format!(
        r#"{{
            "topology": {{"kind": "ba", "n": 16, "m": 2}},
            "partition": {{"scheme": "hub_focused", "fraction": 0.25, "g1_classes": [0, 1], "g2_classes": [2, 3]}},
            "dataset": {{"source": "synthetic", "classes": 4, "dims": 6, "per_class": 80, "test_per_class": 10}},
            "learner": {{"hidden_layers": [8], "lr": 0.1, "batch_size": 8}},
            "seed": 17,
            "replicates": 2,
            "confusion_every": 2,
            "output": {out:?}
            {extra}
        }}"#
    );
    ExperimentConfig::from_json(&text).unwrap()
}

const FILES: [&str; 5] = ["summary.csv", "per_node.csv", "confusion.csv", "graph.edges", "partition.json"];

#[test]
fn zero_rounds_writes_only_pretraining() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#", "rounds": 0"#);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.failures().count(), 0);
    let dir = &report.replicates[0].dir;
    let summary = parse_summary_csv(&fs::read_to_string(dir.join("summary.csv")).unwrap()).unwrap();
    assert_eq!(summary.len(), 1);
    assert_eq!(summary[0].0, 0);
    let per_node = parse_per_node_csv(&fs::read_to_string(dir.join("per_node.csv")).unwrap()).unwrap();
    assert_eq!(per_node.len(), 1);
    assert_eq!(per_node[0].accuracy.len(), 16);
}

#[test]
fn layout_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#", "rounds": 3"#);
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.root, tmp.path().join(cfg.fingerprint()));
    for (r, rep) in report.replicates.iter().enumerate() {
        assert_eq!(rep.dir, report.root.join(r.to_string()));
        for f in FILES {
            assert!(rep.dir.join(f).is_file(), "missing {f}");
        }
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(rep.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "ok");
        assert_eq!(manifest["fingerprint"], cfg.fingerprint());
        assert_eq!(manifest["seed"], 17 + r as u64);
        assert_eq!(manifest["rounds_completed"], 3);
        assert_eq!(manifest["software_version"], env!("CARGO_PKG_VERSION"));
    }
    let confusion = fs::read_to_string(report.replicates[0].dir.join("confusion.csv")).unwrap();
    let rounds: std::collections::BTreeSet<&str> =
        confusion.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(rounds.into_iter().collect::<Vec<_>>(), vec!["0", "2", "3"]);

    let text = inspect(&report.root).unwrap();
    assert!(text.contains("replicate 0: status ok"), "{text}");
    assert!(text.contains("replicate 1: status ok"), "{text}");
    assert!(text.contains("round 3: mean"), "{text}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_experiment(&config(a.path(), r#", "rounds": 2"#)).unwrap();
    let rb = run_experiment(&config(b.path(), r#", "rounds": 2"#)).unwrap();
    for (x, y) in ra.replicates.iter().zip(&rb.replicates) {
        for f in FILES {
            assert_eq!(fs::read(x.dir.join(f)).unwrap(), fs::read(y.dir.join(f)).unwrap(), "{f} differs");
        }
    }
    let r0 = fs::read(ra.replicates[0].dir.join("per_node.csv")).unwrap();
    let r1 = fs::read(ra.replicates[1].dir.join("per_node.csv")).unwrap();
    assert_ne!(r0, r1, "replicates must use different seeds");
}

#[test]
fn a_deleted_replicate_is_reproduced_alone() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config(tmp.path(), r#", "rounds": 2"#);
    let report = run_experiment(&cfg).unwrap();
    let dir = &report.replicates[1].dir;
    let before: Vec<Vec<u8>> = FILES.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect();
    fs::remove_dir_all(dir).unwrap();
    let data = load_data(&cfg.dataset).unwrap();
    run_replicate(&cfg, &data, 1, dir).unwrap();
    let after: Vec<Vec<u8>> = FILES.iter().map(|f| fs::read(dir.join(f)).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn failing_replicates_are_recorded_and_do_not_stop_the_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), r#", "rounds": 2"#);
    cfg.replicates = 3;
    if let decavg::config::PartitionConfig::HubFocused(f) = &mut cfg.partition {
        f.per_node_per_class = Some(1000);
    }
    let report = run_experiment(&cfg).unwrap();
    assert_eq!(report.replicates.len(), 3);
    for rep in &report.replicates {
        let err = rep.result.as_ref().unwrap_err();
        assert_eq!(err.stage.name(), "partition");
        let manifest: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(rep.dir.join("manifest.json")).unwrap()).unwrap();
        assert_eq!(manifest["status"], "failed");
        assert_eq!(manifest["stage"], "partition");
        assert!(manifest["error"].as_str().unwrap().contains("deficit"));
    }
    let text = inspect(&report.root).unwrap();
    assert!(text.contains("failed at stage partition"), "{text}");
}

#[test]
fn training_failure_keeps_completed_rounds() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config(tmp.path(), r#", "rounds": 30"#);
    cfg.replicates = 1;
    cfg.learner.lr = 1e200;
    cfg.learner.momentum = 0.9;
    let report = run_experiment(&cfg).unwrap();
    let rep = &report.replicates[0];
    let err = rep.result.as_ref().unwrap_err();
    assert_eq!(err.stage.name(), "training");
    assert!(err.source.to_string().contains("round"), "{}", err.source);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(rep.dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"], "training");
    assert!(rep.dir.join("graph.edges").is_file());
}

#[test]
fn hub_focused_ba_mean_rises_early() {
    let text = r#"{
        "topology": {"kind": "ba", "n": 100, "m": 5},
        "partition": {"scheme": "hub_focused"},
        "dataset": {"source": "synthetic", "classes": 10, "dims": 20, "per_class": 600, "test_per_class": 50, "spread": 0.2},
        "learner": {"hidden_layers": [64, 32], "lr": 0.2, "momentum": 0.5, "batch_size": 8, "epochs": 2},
        "rounds": 10,
        "seed": 1
    }"#;
    let cfg = ExperimentConfig::from_json(text).unwrap();
    let data = load_data(&cfg.dataset).unwrap();
    let rep = simulate(&cfg, &data, 0).unwrap();
    let means: Vec<f64> = rep.sim.history.iter().map(|r| mean_std(&r.accuracy).0).collect();
    let rises = means.windows(2).filter(|w| w[1] > w[0]).count();
    assert!(rises >= 8, "means {means:?}");
}
