use std::fs;
use std::path::Path;

use pif_core::conformal::PValueConvention;
use pif_core::harness::{
    self, ExperimentConfig, HalfWidth, MethodSpec, Partition, SweepConfig, AGGREGATE_FILE, REPORT_FILE, SWEEP_FILE,
};
use serde_json::json;

fn config(dir: &Path, methods: serde_json::Value, replicates: usize) -> ExperimentConfig {
    serde_json::from_value(json!({
        "dataset": {"synthetic": {"kind": "linear", "n": 120, "d": 2, "noise": {"gaussian": {"sigma": 1.0}}, "seed": 4}},
        "learner": {"kind": "ridge", "ridge": {"lambda": 0.1}},
        "methods": methods,
        "alpha": 0.1,
        "test_count": 20,
        "replicates": replicates,
        "grid": {"half_width": "auto", "points": 200},
        "seed": 11,
        "output_dir": dir.join("out"),
    }))
    .unwrap()
}

#[test]
fn report_rows_carry_training_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!([{"name": "split-conformal"}, {"name": "cross-conformal", "folds": 5}]), 2);
    let rep = harness::run_experiment(cfg).unwrap();
    assert_eq!(rep.rows.len(), 4);
    for row in &rep.rows {
        let expected = if row.method.starts_with("split") { 1 } else { 5 };
        assert_eq!(row.trainings, expected, "{}", row.method);
    }
    let report = fs::read_to_string(dir.path().join("out").join(REPORT_FILE)).unwrap();
    let mut lines = report.lines();
    assert_eq!(
        lines.next().unwrap(),
        "method,dataset,replicate,coverage,mean_width,se_coverage,se_width,trainings,empty_count"
    );
    assert_eq!(lines.count(), 4);
    for m in ["split-conformal-abs", "cross-conformal-k5-abs"] {
        for r in 0..2 {
            let obs = fs::read_to_string(dir.path().join("out").join(m).join(format!("{r}.csv"))).unwrap();
            assert_eq!(obs.lines().count(), 21);
        }
    }
    assert_eq!(rep.aggregate.auto_grid_trainings, 2);
}

#[test]
fn aggregate_is_the_mean_of_replicate_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!([{"name": "pivot-bootstrap", "resamples": 20}]), 10);
    let rep = harness::run_experiment(cfg).unwrap();
    let s = rep.aggregate.methods[0].summary.unwrap();
    let cov: f64 = rep.rows.iter().map(|r| r.coverage).sum::<f64>() / 10.0;
    let width: f64 = rep.rows.iter().map(|r| r.mean_width).sum::<f64>() / 10.0;
    assert!((s.coverage - cov).abs() < 1e-12);
    assert!((s.mean_width - width).abs() < 1e-12);
    assert_eq!(s.total_points, 200);
    assert_eq!(rep.aggregate.methods[0].total_trainings, 200);
    // no grid needed, so no sizing pass either
    assert_eq!(rep.aggregate.auto_grid_trainings, 0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let methods = json!([
        {"name": "split-conformal", "conformity": {"kde_neg_log_density": {}}},
        {"name": "bootstrap-conformal", "resamples": 4},
        {"name": "percentile-bootstrap", "resamples": 20}
    ]);
    let cfg = config(dir.path(), methods, 2);
    harness::run_experiment(cfg.clone()).unwrap();
    let read = |p: &str| fs::read(dir.path().join("out").join(p)).unwrap();
    let first = [read(REPORT_FILE), read(AGGREGATE_FILE), read("percentile-bootstrap-b20/1.csv")];
    harness::run_experiment(cfg).unwrap();
    let second = [read(REPORT_FILE), read(AGGREGATE_FILE), read("percentile-bootstrap-b20/1.csv")];
    assert_eq!(first, second);
}

#[test]
fn invalid_configs_write_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let text = json!({
        "dataset": {"synthetic": {"kind": "linear", "n": 50, "d": 1, "noise": {"gaussian": {"sigma": 1.0}}, "seed": 0}},
        "learner": {"kind": "ridge", "ridge": {"lambda": 1.0}},
        "methods": [{"name": "jackknife-plus"}],
        "alpha": 0.1, "test_count": 5, "replicates": 1, "seed": 0,
        "output_dir": dir.path().join("out"),
    })
    .to_string();
    let err = ExperimentConfig::from_json(&text).unwrap_err();
    assert!(err.is_invalid_input());

    let mut cfg = config(dir.path(), json!([{"name": "split-conformal"}]), 1);
    cfg.alpha = 1.5;
    assert!(harness::run_experiment(cfg.clone()).unwrap_err().is_invalid_input());
    cfg.alpha = 0.1;
    cfg.methods.push(MethodSpec::CrossConformal { folds: 100, conformity: Default::default() });
    assert!(harness::run_experiment(cfg.clone()).unwrap_err().is_invalid_input());
    cfg.methods = vec![MethodSpec::SplitConformal { conformity: Default::default() }];
    cfg.grid.half_width = HalfWidth::Fixed(-1.0);
    assert!(harness::run_experiment(cfg).unwrap_err().is_invalid_input());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn failed_methods_are_recorded_and_skipped() {
    let dir = tempfile::tempdir().unwrap();
    // alpha above l/(l+1) rejects every candidate, so no automatic grid
    let mut cfg = config(dir.path(), json!([{"name": "split-conformal"}, {"name": "pivot-bootstrap", "resamples": 5}]), 2);
    cfg.alpha = 0.99;
    let rep = harness::run_experiment(cfg).unwrap();
    let split = &rep.aggregate.methods[0];
    assert_eq!(split.completed_replicates, 0);
    assert_eq!(split.failures.len(), 2);
    assert_eq!(rep.aggregate.methods_without_results(), ["split-conformal-abs"]);
    assert_eq!(rep.aggregate.methods[1].completed_replicates, 2);
}

#[test]
fn conditional_bins_partition_the_test_points() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(dir.path(), json!([{"name": "split-conformal"}]), 3);
    cfg.conditional = serde_json::from_value(json!({"key": "prediction", "edges": [-1.0, 0.0, 1.0, 2.0]})).unwrap();
    let rep = harness::run_experiment(cfg).unwrap();
    let m = &rep.aggregate.methods[0];
    let bins = m.conditional.as_ref().unwrap();
    assert_eq!(bins.bins.len(), 5);
    assert_eq!(bins.total_count(), 60);
    let s = m.summary.unwrap();
    assert_eq!(bins.pooled_coverage().unwrap(), s.total_hits as f64 / s.total_points as f64);
}

fn sweep_config(dir: &Path, activations: serde_json::Value, five_fold: bool) -> SweepConfig {
    serde_json::from_value(json!({
        "experiment": {
            "dataset": {"synthetic": {"kind": "sinusoid", "n": 60, "d": 1, "noise": {"gaussian": {"sigma": 0.2}}, "seed": 1}},
            "learner": {"kind": "mlp", "mlp": {"layers": 1, "nodes_per_layer": 5, "activation": "relu",
                        "epochs": 3, "batch_size": 16, "learning_rate": 0.01, "seed": 2}},
            "methods": [{"name": "split-conformal"}],
            "alpha": 0.2, "test_count": 10, "replicates": 1, "seed": 3,
            "grid": {"half_width": 3.0, "points": 50},
            "output_dir": dir.join("sweep"),
        },
        "activations": activations,
        "layers": [1, 2],
        "nodes": [5],
        "five_fold": five_fold,
    }))
    .unwrap()
}

#[test]
fn sweep_writes_one_report_per_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path(), json!(["relu", "tanh", "sigmoid"]), false);
    let rep = harness::run_sweep(&cfg).unwrap();
    assert_eq!(rep.designs.len(), 6);
    for (d, r) in &rep.designs {
        assert!(dir.path().join("sweep").join(&d.label).join(AGGREGATE_FILE).exists());
        assert!(r.aggregate.methods[0].rmse.is_some());
    }
    let summary = fs::read_to_string(dir.path().join("sweep").join(SWEEP_FILE)).unwrap();
    assert_eq!(summary.lines().count(), 7);
}

#[test]
fn five_fold_sweep_tests_every_row_once() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path(), json!(["tanh"]), true);
    let rep = harness::run_sweep(&cfg).unwrap();
    for (_, r) in &rep.designs {
        assert_eq!(r.aggregate.replicates, 5);
        let mut rows: Vec<usize> = r.observations[0].iter().flatten().flatten().map(|o| o.test_row).collect();
        rows.sort();
        assert_eq!(rows, (0..60).collect::<Vec<_>>());
    }
}

#[test]
fn empty_sweep_grid_is_invalid() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = sweep_config(dir.path(), json!([]), false);
    assert!(harness::run_sweep(&cfg).unwrap_err().is_invalid_input());
    assert!(!dir.path().join("sweep").exists());
}

#[test]
fn kfold_partition_requires_enough_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), json!([{"name": "split-conformal"}]), 1);
    assert!(harness::prepare(cfg.clone(), Partition::KFold(1)).is_err());
    assert!(harness::prepare(cfg, Partition::KFold(5)).is_ok());
}

#[test]
fn inclusive_p_values_never_shrink_intervals() {
    let dir = tempfile::tempdir().unwrap();
    let strict = config(dir.path(), json!([{"name": "split-conformal"}, {"name": "cross-conformal", "folds": 4}]), 2);
    let mut inclusive = strict.clone();
    inclusive.p_value_convention = PValueConvention::Inclusive;
    inclusive.output_dir = dir.path().join("inclusive");
    let a = harness::run_experiment(strict).unwrap();
    let b = harness::run_experiment(inclusive).unwrap();
    for (s, i) in a.aggregate.methods.iter().zip(&b.aggregate.methods) {
        let (s, i) = (s.summary.unwrap(), i.summary.unwrap());
        assert!(i.total_hits >= s.total_hits);
        assert!(i.mean_width >= s.mean_width);
    }
}
