mod common;

use std::path::Path;
use std::process::Command;

use drfg::harness::{AGGREGATE_JSON, RUN_LOG_JSON, TRIALS_CSV, TSNE_TEST_CSV, TSNE_TRAIN_CSV};
use drfg::store::FeatureStore;

fn drfg(args: &[&str], extra: &[&Path]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_drfg"))
        .args(args)
        .args(extra)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

#[test]
fn extract_experiment_and_follow_up_commands() {
    let dir = tempfile::tempdir().unwrap();
    common::write_stub_dataset(&dir.path().join("data"), 8, 3);
    let config = common::write_stub_config(dir.path(), 2, 5);

    let store_path = dir.path().join("features.drfg");
    drfg(&["extract", "--config"], &[&config]);
    let store = FeatureStore::read(&store_path).unwrap();
    assert_eq!(store.len(), 24);
    assert_eq!(store.dim(), 8 * 16);
    assert_eq!(store.class_names(), common::CLASSES);
    assert_eq!(store.samples()[0].id, "COVID/img_000.png");

    drfg(&["experiment", "--config"], &[&config]);
    let runs = dir.path().join("runs");
    for f in [TRIALS_CSV, AGGREGATE_JSON, RUN_LOG_JSON, TSNE_TRAIN_CSV, TSNE_TEST_CSV] {
        assert!(runs.join(f).is_file(), "missing {f}");
    }
    let trials = std::fs::read_to_string(runs.join(TRIALS_CSV)).unwrap();
    assert_eq!(trials.lines().count(), 1 + 2 * 3);
    let tsne = std::fs::read_to_string(runs.join(TSNE_TEST_CSV)).unwrap();
    assert!(tsne.starts_with("sample_id,label,x,y\n"));

    let metrics = drfg(&["metrics", "--trials"], &[&runs.join(TRIALS_CSV)]);
    let json: serde_json::Value = serde_json::from_slice(&metrics.stdout).unwrap();
    assert_eq!(json["svm"]["n_trials"], 2);

    let latents = dir.path().join("latents.drfg");
    drfg(&["encode", "--config"], &[&config, Path::new("--store"), &store_path, Path::new("--out"), &latents]);
    assert_eq!(FeatureStore::read(&latents).unwrap().dim(), 8);

    let csv = dir.path().join("embedding.csv");
    drfg(
        &["tsne", "--perplexity", "5", "--iterations", "250", "--store"],
        &[&latents, Path::new("--out"), &csv],
    );
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 25);
}

#[test]
fn benchmark_with_constant_backbone_predicts_majority() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    common::write_stub_dataset(&data, 6, 4);
    // unbalance the classes so the majority is well defined
    for i in 0..3 {
        std::fs::remove_file(data.join("Normal").join(format!("img_00{i}.png"))).unwrap();
        std::fs::remove_file(data.join("COVID").join(format!("img_00{i}.png"))).unwrap();
    }
    let cfg = serde_json::json!({
        "task": "three_class",
        "n_trials": 3,
        "dataset_dir": "data",
        "registry": [{ "name": "flat", "stub": { "kind": "constant", "value": 2.5 }, "channels": 8 }],
        "classifier": { "train": { "epochs": 20 } },
        "tsne_trial": null,
        "output_dir": "runs"
    });
    let path = dir.path().join("bench.json");
    std::fs::write(&path, cfg.to_string()).unwrap();
    drfg(&["benchmark", "--backbone", "flat", "--config"], &[&path]);
    let out = dir.path().join("runs/benchmark_flat");
    let rows = drfg::metrics::read_trial_csv(std::fs::File::open(out.join(TRIALS_CSV)).unwrap()).unwrap();
    // test split: 1 COVID, 1 Normal, 1 Viral Pneumonia (6 images)
    for row in &rows {
        assert!((row.accuracy - 1.0 / 3.0).abs() < 1e-12, "{row:?}");
    }
    assert_eq!(rows.len(), 9);
}

#[test]
fn bad_config_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"task":"binary","test_fraction":2}"#).unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_drfg"))
        .args(["experiment", "--config"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("test_fraction"));
}
