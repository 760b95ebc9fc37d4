//! The passes chained in their fixed order.

use crate::analysis::{analyze, DistEnv};
use crate::checkpoint::{insert_checkpointing, make_restart_version, plan_checkpoint, CheckpointPlan};
use crate::distributed::{distribute, SpmdProgram};
use crate::error::{Error, ErrorKind, Result};
use crate::frontend::compile_source;
use crate::ir::{validate, FunctionIR};
use crate::lowering::{lower_to_parfors, tag_patterns};
use crate::optimizer::{optimize, FusionReport};

/// Parse, type, tag and lower to parfors.
pub fn lower_source(src: &str) -> Result<FunctionIR> {
    let mut f = compile_source(src)?;
    tag_patterns(&mut f);
    lower_to_parfors(&mut f)?;
    check(&f, "lowering")?;
    Ok(f)
}

/// Lowered IR checked against the structural invariants; a violation is
/// a compiler bug.
pub fn check(f: &FunctionIR, after: &str) -> Result<()> {
    validate(f).map_err(|v| {
        let first = &v[0];
        Error::new(ErrorKind::Internal, Some(first.span), format!("invalid IR after {after}: {first}"))
    })
}

#[derive(Clone, Debug)]
pub struct Optimized {
    pub lowered: FunctionIR,
    pub lowered_env: DistEnv,
    pub func: FunctionIR,
    pub env: DistEnv,
    pub report: FusionReport,
}

pub fn optimize_source(src: &str) -> Result<Optimized> {
    let lowered = lower_source(src)?;
    let lowered_env = analyze(&lowered)?;
    let mut func = lowered.clone();
    let (env, report) = optimize(&mut func, &lowered_env)?;
    check(&func, "optimization")?;
    Ok(Optimized { lowered, lowered_env, func, env, report })
}

pub fn spmd_source(src: &str) -> Result<(Optimized, SpmdProgram)> {
    let o = optimize_source(src)?;
    let p = distribute(&o.func, &o.env)?;
    check(&p.func, "distribution")?;
    Ok((o, p))
}

/// The checkpointed program and its restart variant, both in SPMD form.
#[derive(Clone, Debug)]
pub struct Resilient {
    pub optimized: Optimized,
    pub plan: CheckpointPlan,
    pub checkpointed: SpmdProgram,
    pub restart: SpmdProgram,
}

pub fn resilient_source(src: &str) -> Result<Resilient> {
    let o = optimize_source(src)?;
    let plan = plan_checkpoint(&o.func, &o.env)?;
    let with = insert_checkpointing(&o.func, &plan);
    let restart = make_restart_version(&with, &plan);
    check(&with, "checkpointing")?;
    check(&restart, "checkpointing")?;
    let checkpointed = distribute(&with, &o.env)?;
    let restart = distribute(&restart, &o.env)?;
    check(&checkpointed.func, "distribution")?;
    check(&restart.func, "distribution")?;
    Ok(Resilient { optimized: o, plan, checkpointed, restart })
}
