//! The world: steps ranks to synchronization points and services them.

use std::collections::BTreeSet;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::checkpoint::{Gate, Snapshot, Store};
use super::compile::{Program, Slot};
use super::datafile;
use super::exec::{Ctx, Rank, ReqOp, Request, Response, Yield};
use super::{Outputs, RunConfig, Schedule};
use crate::error::{Error, ErrorKind, Result};

fn step_all(ranks: &mut [Rank], ctx: &Ctx, schedule: Schedule) -> Vec<Result<Yield>> {
    #[cfg(feature = "parallel")]
    if schedule == Schedule::Parallel && ranks.len() > 1 {
        return ranks.par_iter_mut().map(|r| r.step(ctx)).collect();
    }
    let _ = schedule;
    ranks.iter_mut().map(|r| r.step(ctx)).collect()
}

fn mismatch(msg: String) -> Error {
    Error::new(ErrorKind::CollectiveMismatch, None, msg)
}

fn describe(y: &Yield) -> String {
    match y {
        Yield::Collective(r) => format!("{} at {} (iteration {:?})", r.op.kind(), r.span, r.path),
        Yield::Boundary { path, .. } => format!("loop boundary (iteration {path:?})"),
        Yield::Done(_) => "end of program".into(),
    }
}

struct Checkpointing {
    store: Store,
    gate: Gate,
}

pub fn run(prog: &Program, cfg: &RunConfig, rank_dependent: &BTreeSet<String>) -> Result<Outputs> {
    if cfg.nranks == 0 {
        return Err(Error::new(ErrorKind::Runtime, None, "nranks must be at least 1"));
    }
    let ctx = Ctx::new(prog, cfg.seed, &cfg.externs, cfg.nranks, cfg.checkpoint.is_some());
    let mut ranks = (0..cfg.nranks)
        .map(|r| {
            let skip = cfg.skip_collective.filter(|(sr, _)| *sr == r).map(|(_, n)| n);
            Rank::new(r, prog, &cfg.args, skip)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut ck = cfg.checkpoint.as_ref().map(|c| Checkpointing {
        store: Store::new(&c.dir, &prog.name),
        gate: Gate::new(c.mtbf, c.cost_estimate, c.clock.clone()),
    });
    let private: BTreeSet<usize> = prog.private.iter().copied().collect();
    let compared: Vec<(String, Slot)> = prog
        .slots
        .iter()
        .filter(|(n, s)| {
            !rank_dependent.contains(*n)
                && match s {
                    Slot::Scalar(i) => !private.contains(i),
                    Slot::Array(_) => true,
                    Slot::Str(_) => false,
                }
        })
        .map(|(n, s)| (n.clone(), *s))
        .collect();

    let mut out = Outputs::default();
    loop {
        let mut ys = Vec::with_capacity(ranks.len());
        for y in step_all(&mut ranks, &ctx, cfg.schedule) {
            ys.push(y?);
        }
        let first = &ys[0];
        for (r, y) in ys.iter().enumerate().skip(1) {
            if std::mem::discriminant(y) != std::mem::discriminant(first) {
                return Err(mismatch(format!(
                    "rank 0 reached {} but rank {r} reached {}",
                    describe(first),
                    describe(y)
                )));
            }
        }
        match first {
            Yield::Done(_) => {
                let Yield::Done(values) = ys.swap_remove(0) else { unreachable!() };
                out.values = values;
                return Ok(out);
            }
            Yield::Boundary { id, path } => {
                for (r, y) in ys.iter().enumerate().skip(1) {
                    if let Yield::Boundary { id: i2, path: p2 } = y {
                        if i2 != id || p2 != path {
                            return Err(mismatch(format!(
                                "rank 0 reached {} but rank {r} reached {}",
                                describe(first),
                                describe(y)
                            )));
                        }
                    }
                }
                out.stats.boundaries += 1;
                if path.len() == 1 {
                    if cfg.fail_at_iteration == Some(path[0]) {
                        return Err(Error::new(
                            ErrorKind::Aborted,
                            None,
                            format!("injected failure at iteration {}", path[0]),
                        ));
                    }
                    if cfg.check_divergence && ranks.len() > 1 {
                        check_divergence(&ranks, &compared, path)?;
                    }
                }
            }
            Yield::Collective(_) => {
                let reqs: Vec<Request> = ys
                    .into_iter()
                    .map(|y| match y {
                        Yield::Collective(r) => r,
                        _ => unreachable!(),
                    })
                    .collect();
                let resp = service(&reqs, ck.as_mut(), &mut out)?;
                out.stats.collectives += 1;
                for (rank, r) in ranks.iter_mut().zip(resp) {
                    rank.complete(&ctx, r)?;
                }
            }
        }
    }
}

fn check_divergence(ranks: &[Rank], compared: &[(String, Slot)], path: &[i64]) -> Result<()> {
    let m0 = &ranks[0].mem;
    for r in &ranks[1..] {
        for (name, s) in compared {
            let same = match *s {
                Slot::Scalar(i) => m0.scalars[i].to_bits() == r.mem.scalars[i].to_bits(),
                Slot::Array(i) => {
                    let (a, b) = (&m0.arrays[i], &r.mem.arrays[i]);
                    a.dims == b.dims && a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                Slot::Str(_) => true,
            };
            if !same {
                return Err(Error::new(
                    ErrorKind::Divergence,
                    None,
                    format!("replicated `{name}` differs between rank 0 and rank {} at iteration {}", r.rank, path[0]),
                ));
            }
        }
    }
    Ok(())
}

fn service(reqs: &[Request], ck: Option<&mut Checkpointing>, out: &mut Outputs) -> Result<Vec<Response>> {
    let r0 = &reqs[0];
    for (r, q) in reqs.iter().enumerate().skip(1) {
        if q.id != r0.id || q.path != r0.path || q.op.kind() != r0.op.kind() || q.op.shape() != r0.op.shape() {
            return Err(mismatch(format!(
                "rank 0 entered {} at {} (iteration {:?}, shape {:?}) but rank {r} entered {} at {} (iteration {:?}, shape {:?})",
                r0.op.kind(),
                r0.span,
                r0.path,
                r0.op.shape(),
                q.op.kind(),
                q.span,
                q.path,
                q.op.shape()
            )));
        }
    }
    let n = reqs.len();
    let none = || (0..n).map(|_| Response::None).collect();
    match &r0.op {
        ReqOp::Allreduce { op, data } => {
            let mut acc = data.clone();
            for q in &reqs[1..] {
                let ReqOp::Allreduce { data, .. } = &q.op else { unreachable!() };
                for (a, x) in acc.iter_mut().zip(data) {
                    *a = op.combine(*a, *x);
                }
            }
            Ok((0..n).map(|_| Response::Data(acc.clone())).collect())
        }
        ReqOp::Bcast { root, .. } => {
            let q = reqs.get(*root as usize).ok_or_else(|| mismatch(format!("bcast root {root} does not exist")))?;
            let ReqOp::Bcast { data: Some(d), .. } = &q.op else {
                return Err(Error::internal("bcast root supplied no payload"));
            };
            Ok((0..n).map(|_| Response::Data(d.clone())).collect())
        }
        ReqOp::BlockWrite { path, elem, lead, .. } => {
            let mut data = Vec::new();
            let mut next = 0;
            for q in reqs {
                let ReqOp::BlockWrite { start, size, data: d, .. } = &q.op else { unreachable!() };
                if *start != next {
                    return Err(Error::internal(format!("block write blocks are not contiguous at {start}")));
                }
                next += size;
                data.extend_from_slice(d);
            }
            let mut dims = lead.clone();
            dims.push(next);
            datafile::write(std::path::Path::new(path), *elem, &dims, &data).map_err(|e| e.with_span(r0.span))?;
            Ok(none())
        }
        ReqOp::Checkpoint { iteration, vars } => {
            if let Some(c) = ck {
                if c.gate.due()? {
                    let snap = Snapshot { iteration: *iteration, vars: vars.clone() };
                    let store = &c.store;
                    c.gate.record(|| store.write(&snap))?;
                    out.stats.checkpoints_written += 1;
                }
            }
            Ok(none())
        }
        ReqOp::Restore { names } => {
            let Some(c) = ck else { return Ok((0..n).map(|_| Response::Restore(None)).collect()) };
            let found = match c.store.latest() {
                Ok(Some(s)) => {
                    if let Some(missing) = names.iter().find(|nm| !s.vars.iter().any(|(v, _)| v == *nm)) {
                        out.warnings.push(format!(
                            "checkpoint for iteration {} lacks `{missing}`; starting from scratch",
                            s.iteration
                        ));
                        None
                    } else {
                        out.stats.restored_from = Some(s.iteration);
                        Some((s.iteration, s.vars))
                    }
                }
                Ok(None) => None,
                Err(e) => {
                    out.warnings.push(format!("{}; starting from scratch", e.message));
                    None
                }
            };
            Ok((0..n).map(|_| Response::Restore(found.clone())).collect())
        }
        ReqOp::Cleanup => {
            if let Some(c) = ck {
                c.store.cleanup()?;
            }
            Ok(none())
        }
    }
}
