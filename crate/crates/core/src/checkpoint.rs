//! Minimal checkpointing of the single iteration loop, and the restart
//! variant that resumes from the latest checkpoint.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::analysis::DistEnv;
use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{block_effects, expr_vars};
use crate::ir::*;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointPlan {
    /// Position of the loop in the function body.
    pub outer_loop: usize,
    pub index_var: Var,
    /// Loop index first, then the iteration-dependent variables by name.
    pub saved_vars: Vec<(Var, Type)>,
    pub span: Span,
}

impl CheckpointPlan {
    pub fn names(&self) -> Vec<Var> {
        self.saved_vars.iter().map(|(v, _)| v.clone()).collect()
    }
}

fn err(span: Option<Span>, msg: impl Into<String>) -> Error {
    Error::new(ErrorKind::Checkpoint, span, msg)
}

/// Variables whose value at loop entry can reach a later read: read in
/// the body before being fully defined, partially updated in the body,
/// or read after the loop (the loop may run zero times).
pub fn live_at_loop_entry(f: &FunctionIR, at: usize) -> BTreeSet<Var> {
    let StmtKind::For { body, .. } = &f.body[at].kind else { return BTreeSet::new() };
    let inner = block_effects(body);
    let after = block_effects(&f.body[at + 1..]);
    let mut live = inner.reads;
    live.extend(inner.updates);
    live.extend(after.reads);
    live
}

pub fn plan_checkpoint(f: &FunctionIR, env: &DistEnv) -> Result<CheckpointPlan> {
    let loops: Vec<usize> =
        f.body.iter().enumerate().filter(|(_, s)| matches!(s.kind, StmtKind::For { .. })).map(|(i, _)| i).collect();
    if loops.len() != 1 {
        return Err(err(None, format!("no single outer loop: found {} top-level loops", loops.len())));
    }
    let at = loops[0];
    let s = &f.body[at];
    let StmtKind::For { var, lo, hi, body } = &s.kind else { unreachable!() };
    let written: BTreeSet<Var> = block_effects(body).writes().cloned().collect();
    let bounds: BTreeSet<Var> = expr_vars(lo).into_iter().chain(expr_vars(hi)).collect();
    if let Some(v) = bounds.intersection(&written).next() {
        return Err(err(Some(s.span), format!("loop trip count depends on `{v}`, which the loop writes")));
    }
    let live = live_at_loop_entry(f, at);
    let mut saved = vec![(var.clone(), Type::Scalar(ScalarKind::I64))];
    for v in live.intersection(&written) {
        if v == var {
            continue;
        }
        let ty = f.ty(v).cloned().ok_or_else(|| Error::internal(format!("untyped `{v}`")))?;
        if ty.is_array() && env.array(v).is_1d() {
            return Err(err(
                Some(s.span),
                format!("iteration-dependent `{v}` is distributed; only replicated state can be checkpointed"),
            ));
        }
        saved.push((v.clone(), ty));
    }
    Ok(CheckpointPlan { outer_loop: at, index_var: var.clone(), saved_vars: saved, span: s.span })
}

/// Checkpoint call first in the loop body, cleanup right after the loop.
pub fn insert_checkpointing(f: &FunctionIR, plan: &CheckpointPlan) -> FunctionIR {
    let mut g = f.clone();
    let sp = plan.span;
    if let StmtKind::For { body, .. } = &mut g.body[plan.outer_loop].kind {
        body.insert(0, Stmt::new(StmtKind::Checkpoint { vars: plan.names(), index_var: plan.index_var.clone() }, sp));
    }
    g.body.insert(plan.outer_loop + 1, Stmt::new(StmtKind::CheckpointCleanup, sp));
    g
}

/// Restore block before the loop; the loop then starts one past the
/// restored iteration, or at its original start when nothing is found.
pub fn make_restart_version(f: &FunctionIR, plan: &CheckpointPlan) -> FunctionIR {
    let mut g = f.clone();
    let start = g.fresh("start");
    g.symbols.insert(start.clone(), Type::Scalar(ScalarKind::I64));
    let StmtKind::For { lo, .. } = &mut g.body[plan.outer_loop].kind else { unreachable!("plan points at a loop") };
    let default_start = std::mem::replace(lo, Expr::var(start.clone()));
    let restore = StmtKind::CheckpointRestore {
        vars: plan.names(),
        index_var: plan.index_var.clone(),
        start_var: start,
        default_start,
    };
    g.body.insert(plan.outer_loop, Stmt::new(restore, plan.span));
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze;
    use crate::ir::text::parse_function;

    fn plan(src: &str) -> Result<CheckpointPlan> {
        let f = parse_function(src).unwrap();
        let env = analyze(&f).unwrap();
        plan_checkpoint(&f, &env)
    }

    const COUNTER: &str = r#"(function f
  (params (n i64))
  (symbols (n i64) (i i64) (s f64) (t f64) (u f64))
  (body
    (assign @1:1 s 0.0)
    (assign @2:1 t 1.0)
    (for @3:1 i 1 n
      (assign @4:1 u (* t 2.0))
      (assign @5:1 s (+ s u)))
    (return @6:1 s)))"#;

    const SCALE: &str = r#"(function f
  (params (n i64) (file str))
  (symbols (n i64) (file str) (N i64) (x (f64 N)) (i i64) (k i64))
  (body
    (size-query @1:1 (N) "points" file)
    (alloc @1:1 x (N))
    (data-source @1:1 x "points" file)
    (for @2:1 i 1 n
      (parfor @3:1 :map 1 map (loops (k 1 N)) (reductions)
        (write @3:1 x (k) (* (read x k) 2.0))))
    (return @4:1 n)))"#;

    #[test]
    fn saves_only_carried_state() {
        let p = plan(COUNTER).unwrap();
        assert_eq!(p.names(), vec!["i", "s"]);
    }

    #[test]
    fn two_loops_are_refused() {
        let src = COUNTER.replace("(return @6:1 s)", "(for @6:1 i 1 n (assign @6:1 s (+ s 1.0))) (return @6:1 s)");
        let e = plan(&src).unwrap_err();
        assert_eq!(e.kind, ErrorKind::Checkpoint);
        assert!(e.message.contains("no single outer loop"));
    }

    #[test]
    fn moving_trip_count_is_refused() {
        let src = COUNTER.replace("(assign @5:1 s (+ s u))", "(assign @5:1 s (+ s u)) (assign @5:1 n (- n 1))");
        assert!(plan(&src).unwrap_err().message.contains("trip count"));
    }

    #[test]
    fn distributed_state_is_refused() {
        let e = plan(SCALE).unwrap_err();
        assert!(e.message.contains("`x` is distributed"), "{}", e.message);
    }

    #[test]
    fn restart_version_starts_from_restored_index() {
        let f = parse_function(COUNTER).unwrap();
        let p = plan_checkpoint(&f, &analyze(&f).unwrap()).unwrap();
        let g = make_restart_version(&insert_checkpointing(&f, &p), &p);
        let StmtKind::CheckpointRestore { start_var, default_start, .. } = &g.body[2].kind else { panic!() };
        assert_eq!(default_start, &Expr::i64(1));
        let StmtKind::For { lo, body, .. } = &g.body[3].kind else { panic!() };
        assert_eq!(lo, &Expr::var(start_var.clone()));
        assert!(matches!(body[0].kind, StmtKind::Checkpoint { .. }));
        assert!(matches!(g.body[4].kind, StmtKind::CheckpointCleanup));
    }
}
