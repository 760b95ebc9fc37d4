mod common;

use std::collections::BTreeSet;

use dlg_core::analysis::DistEnv;
use dlg_core::ir::visit::{block_effects, for_each_stmt};
use dlg_core::ir::{Expr, FunctionIR, Parfor, Stmt, StmtKind};
use dlg_core::pipeline::optimize_source;
use dlg_core::runtime::{datafile, max_rel_error, run_sequential};

fn loop_body(f: &FunctionIR) -> &[Stmt] {
    f.body
        .iter()
        .find_map(|s| match &s.kind {
            StmtKind::For { body, .. } => Some(body.as_slice()),
            _ => None,
        })
        .expect("fixture has an iteration loop")
}

fn parfors_in(stmts: &[Stmt]) -> Vec<&Parfor> {
    stmts
        .iter()
        .filter_map(|s| match &s.kind {
            StmtKind::Parfor(p) => Some(p.as_ref()),
            _ => None,
        })
        .collect()
}

fn distributed_parfors<'a>(stmts: &'a [Stmt], env: &DistEnv) -> Vec<&'a Parfor> {
    parfors_in(stmts).into_iter().filter(|p| env.parfor(p.id).is_1d()).collect()
}

#[test]
fn sequential_results_survive_optimization() {
    for name in common::FIXTURES {
        let o = optimize_source(&common::source(name)).unwrap();
        let d = tempfile::tempdir().unwrap();
        let cfg = common::setup(name, d.path(), 11);
        let before = run_sequential(&o.lowered, &cfg).unwrap();
        let out_before = d.path().join("out").join("y.dat");
        let sink_before = out_before.exists().then(|| datafile::read_all(&out_before).unwrap().1);
        let after = run_sequential(&o.func, &cfg).unwrap();
        let err = max_rel_error(&before, &after).unwrap();
        assert!(err <= 1e-10, "{name}: relative error {err}");
        if let Some(b) = sink_before {
            let a = datafile::read_all(&out_before).unwrap().1;
            assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-10 * x.abs().max(1.0), "{name}: sink differs");
            }
        }
    }
}

#[test]
fn logistic_loop_is_one_distributed_parfor() {
    let o = optimize_source(&common::source("logistic_regression")).unwrap();
    let body = loop_body(&o.func);
    assert_eq!(distributed_parfors(body, &o.env).len(), 1);
    assert!(!body.iter().any(|s| matches!(s.kind, StmtKind::Gemm { .. })));
    assert_eq!(o.report.heuristics_fired.len(), 2);
    assert!(o.report.parfors_after <= o.report.parfors_before);
}

#[test]
fn kmeans_loop_is_one_pass_over_samples() {
    let o = optimize_source(&common::source("kmeans")).unwrap();
    let body = loop_body(&o.func);
    let dp = distributed_parfors(body, &o.env);
    assert_eq!(dp.len(), 1);
    assert_eq!(dp[0].loops.len(), 1);
    assert_eq!(dp[0].loops[0].hi, Expr::var("N"));
    assert!(o.report.heuristics_fired.iter().any(|(h, _)| h == "rep-interchange"));
}

#[test]
fn kernel_density_sweep_is_interchanged() {
    let o = optimize_source(&common::source("kernel_density")).unwrap();
    let dp = distributed_parfors(&o.func.body, &o.env);
    assert_eq!(dp.len(), 1);
    assert_eq!(dp[0].loops[0].hi, Expr::var("N"));
}

#[test]
fn two_d_product_is_left_alone() {
    let o = optimize_source(&common::source("matrix_multiply")).unwrap();
    let mut gemms = 0;
    for_each_stmt(&o.func.body, &mut |s| gemms += matches!(s.kind, StmtKind::Gemm { .. }) as usize);
    assert_eq!(gemms, 1);
    assert!(o.report.heuristics_fired.is_empty());
}

/// Arrays a block writes that are observed after it: used by later
/// top-level statements or returned.
fn live_out_writes(f: &FunctionIR) -> BTreeSet<String> {
    let body = loop_body(f);
    let writes = block_effects(body);
    let written: BTreeSet<String> = writes.writes().filter(|v| f.is_array(v)).cloned().collect();
    let outside = block_effects(&f.body[f.body.iter().position(|s| matches!(s.kind, StmtKind::For { .. })).unwrap()..]);
    written.into_iter().filter(|v| outside.reads.contains(v) || f.return_vars().contains(v)).collect()
}

#[test]
fn fusion_keeps_live_out_writes() {
    for name in ["logistic_regression", "linear_regression", "kmeans", "extern_call"] {
        let o = optimize_source(&common::source(name)).unwrap();
        assert_eq!(live_out_writes(&o.lowered), live_out_writes(&o.func), "{name}");
    }
}
