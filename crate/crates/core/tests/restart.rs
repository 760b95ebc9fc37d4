mod common;

use std::path::Path;

use dlg_core::pipeline::resilient_source;
use dlg_core::runtime::checkpoint::{SavedValue, Snapshot, Store};
use dlg_core::runtime::{bit_identical, run_spmd, CheckpointConfig, Clock, RunConfig, Value};
use dlg_core::ErrorKind;

const LOOPED: [&str; 4] = ["logistic_regression", "linear_regression", "kmeans", "extern_call"];

/// A gate that fires on every loop visit after the first.
fn every_iteration(dir: &Path) -> CheckpointConfig {
    CheckpointConfig { dir: dir.to_path_buf(), mtbf: 1e-3, cost_estimate: 1e-3, clock: Clock::virtual_step(1.0) }
}

fn with_iters(cfg: RunConfig, n: i64) -> RunConfig {
    cfg.arg("iters", Value::Scalar(n as f64))
}

#[test]
fn logistic_saves_index_and_weights_only() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    assert_eq!(r.plan.names(), vec!["i", "w"]);
    for big in ["points", "labels"] {
        assert!(!r.plan.names().iter().any(|v| v == big));
    }
}

#[test]
fn kmeans_saves_index_and_centroids() {
    let r = resilient_source(&common::source("kmeans")).unwrap();
    assert_eq!(r.plan.names(), vec!["l", "centroids"]);
}

#[test]
fn fixtures_without_a_loop_are_refused() {
    for name in ["kernel_density", "matrix_multiply"] {
        let e = resilient_source(&common::source(name)).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Checkpoint, "{name}");
    }
}

fn restart_matches(name: &str, iters: i64, fail_at: i64, nranks: usize) {
    let r = resilient_source(&common::source(name)).unwrap();
    let data = tempfile::tempdir().unwrap();
    let base = with_iters(common::setup(name, data.path(), 5), iters).nranks(nranks);
    let clean = run_spmd(&r.checkpointed, &base).unwrap();

    let ck = tempfile::tempdir().unwrap();
    let mut cfg = base.clone();
    cfg.checkpoint = Some(every_iteration(ck.path()));
    cfg.fail_at_iteration = Some(fail_at);
    let e = run_spmd(&r.checkpointed, &cfg).unwrap_err();
    assert_eq!(e.kind, ErrorKind::Aborted);
    let latest = Store::new(ck.path(), &r.checkpointed.func.name).list().last().map(|(i, _)| *i);

    // Checkpoint at the top of iteration j holds the state after j - 1;
    // the first visit only starts the timer.
    assert_eq!(latest, (fail_at >= 3).then_some(fail_at - 2), "{name} k={fail_at}");

    cfg.fail_at_iteration = None;
    let resumed = run_spmd(&r.restart, &cfg).unwrap();
    assert_eq!(resumed.stats.restored_from, latest, "{name} k={fail_at}");
    assert!(bit_identical(&clean, &resumed), "{name}: restart after failure at {fail_at} differs");
    assert!(Store::new(ck.path(), &r.checkpointed.func.name).list().is_empty(), "cleanup after the loop");
}

#[test]
fn logistic_restart_is_exact_for_every_failure_point() {
    for k in 1..=20 {
        restart_matches("logistic_regression", 20, k, 1);
        restart_matches("logistic_regression", 20, k, 4);
    }
}

#[test]
fn every_looped_fixture_restarts_exactly() {
    for name in LOOPED {
        for k in [1, 2, 3, 6, 9] {
            restart_matches(name, 9, k, 2);
        }
    }
}

#[test]
fn restart_without_checkpoint_runs_from_scratch() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let data = tempfile::tempdir().unwrap();
    let base = common::setup("logistic_regression", data.path(), 2).nranks(2);
    let plain = run_spmd(&r.checkpointed, &base).unwrap();
    let ck = tempfile::tempdir().unwrap();
    let cfg = RunConfig { checkpoint: Some(every_iteration(ck.path())), ..base };
    let out = run_spmd(&r.restart, &cfg).unwrap();
    assert_eq!(out.stats.restored_from, None);
    assert!(bit_identical(&plain, &out));
}

#[test]
fn corrupt_checkpoint_falls_back_to_a_fresh_start() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let data = tempfile::tempdir().unwrap();
    let base = common::setup("logistic_regression", data.path(), 2);
    let plain = run_spmd(&r.checkpointed, &base).unwrap();
    let ck = tempfile::tempdir().unwrap();
    let dir = ck.path().join(&r.checkpointed.func.name);
    std::fs::create_dir_all(&dir).unwrap();
    std::fs::write(dir.join("3.ckpt"), b"DLGC garbage").unwrap();
    let cfg = RunConfig { checkpoint: Some(every_iteration(ck.path())), ..base };
    let out = run_spmd(&r.restart, &cfg).unwrap();
    assert_eq!(out.stats.restored_from, None);
    assert!(out.warnings.iter().any(|w| w.contains("starting from scratch")));
    assert!(bit_identical(&plain, &out));
}

#[test]
fn wrong_shape_in_checkpoint_is_an_error() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let data = tempfile::tempdir().unwrap();
    let base = common::setup("logistic_regression", data.path(), 2);
    let ck = tempfile::tempdir().unwrap();
    let snap = Snapshot {
        iteration: 2,
        vars: vec![
            ("i".into(), SavedValue::Scalar(2.0)),
            ("w".into(), SavedValue::Array { dims: vec![1, 7], data: vec![0.0; 7] }),
        ],
    };
    Store::new(ck.path(), &r.restart.func.name).write(&snap).unwrap();
    let cfg = RunConfig { checkpoint: Some(every_iteration(ck.path())), ..base };
    let e = run_spmd(&r.restart, &cfg).unwrap_err();
    assert_eq!(e.kind, ErrorKind::Runtime);
    assert!(e.message.contains("shape [1, 7]"), "{}", e.message);
}

#[test]
fn zero_iterations_write_nothing() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let data = tempfile::tempdir().unwrap();
    let ck = tempfile::tempdir().unwrap();
    let mut cfg = with_iters(common::setup("logistic_regression", data.path(), 2), 0);
    cfg.checkpoint = Some(every_iteration(ck.path()));
    let out = run_spmd(&r.checkpointed, &cfg).unwrap();
    assert_eq!(out.stats.checkpoints_written, 0);
}

#[test]
fn huge_mtbf_never_fires_in_a_short_run() {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let data = tempfile::tempdir().unwrap();
    let ck = tempfile::tempdir().unwrap();
    let mut cfg = with_iters(common::setup("logistic_regression", data.path(), 2), 20);
    cfg.checkpoint = Some(CheckpointConfig {
        dir: ck.path().to_path_buf(),
        mtbf: 1e12,
        cost_estimate: 1.0,
        clock: Clock::virtual_step(1.0),
    });
    cfg.fail_at_iteration = Some(20);
    assert!(run_spmd(&r.checkpointed, &cfg).is_err());
    assert!(Store::new(ck.path(), &r.checkpointed.func.name).list().is_empty());
}
