use std::collections::{BTreeMap, BTreeSet};

use super::SpmdProgram;
use crate::analysis::{index_aliases, DistEnv};
use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{array_accesses, for_each_stmt, for_each_stmt_mut, rewrite_expr, stmt_exprs_mut};
use crate::ir::*;

fn unsupported(span: Span, msg: impl Into<String>) -> Error {
    Error::at(ErrorKind::NotSupported, span, msg)
}

struct Pass<'a> {
    f: &'a FunctionIR,
    env: &'a DistEnv,
    /// Partitioned extent -> (start, size) variables.
    parts: BTreeMap<Extent, (Var, Var)>,
    symbols: BTreeMap<Var, Type>,
}

/// Rewrite an analyzed, optimized function for SPMD execution: 1D_B
/// arrays keep only this rank's block of their last dimension, 1D_B
/// parfors run only this rank's iterations with rebased indices, and
/// reductions, replicated reads and block I/O get their communication.
pub fn distribute(f: &FunctionIR, env: &DistEnv) -> Result<SpmdProgram> {
    for (a, d) in &env.arrays {
        if d.is_2d() {
            return Err(Error::new(
                ErrorKind::NotSupported,
                None,
                format!(
                    "`{a}` is 2D block-cyclic; executing that needs a ScaLAPACK-style backend, which is not provided"
                ),
            ));
        }
    }
    let distributed: BTreeSet<Var> = env.arrays.iter().filter(|(_, d)| d.is_1d()).map(|(a, _)| a.clone()).collect();

    let mut extents = BTreeSet::new();
    for a in &distributed {
        if let Some(t) = f.array_type(a) {
            extents.insert(t.last_dim().clone());
        }
    }
    for p in f.parfors() {
        if env.parfor(p.id).is_1d() {
            let l = p.loops.last().expect("parfor has loops");
            match Extent::from_expr(&l.hi) {
                Some(e) if l.lo == Expr::i64(1) => {
                    extents.insert(e);
                }
                _ => {
                    return Err(Error::new(
                        ErrorKind::NotSupported,
                        None,
                        format!("distributed parfor {} does not run over a whole extent", p.id),
                    ))
                }
            }
        }
    }

    let mut symbols = f.symbols.clone();
    let mut parts = BTreeMap::new();
    for e in &extents {
        let mut fresh = |base: &str| {
            let v = (1..).map(|k| format!("{base}#{k}")).find(|n| !symbols.contains_key(n)).expect("unbounded");
            symbols.insert(v.clone(), Type::Scalar(ScalarKind::I64));
            v
        };
        let start = fresh("mystart");
        let size = fresh("mysize");
        parts.insert(e.clone(), (start, size));
    }
    let mut pass = Pass { f, env, parts, symbols };

    let mut body = Vec::new();
    let params: BTreeSet<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
    let mut placed = BTreeSet::new();
    for e in pass.parts.keys() {
        if matches!(e, Extent::Const(_)) || matches!(e, Extent::Sym(v) if params.contains(v.as_str())) {
            placed.insert(e.clone());
        }
    }
    for e in &placed {
        body.push(pass.partition_stmt(e, Span::default()));
    }
    for s in &f.body {
        let defined: Vec<Extent> = match &s.kind {
            StmtKind::SizeQuery { outs, .. } => outs.iter().map(|o| Extent::Sym(o.clone())).collect(),
            StmtKind::Assign { lhs, .. } => vec![Extent::Sym(lhs.clone())],
            _ => vec![],
        };
        pass.stmt(s, &mut body)?;
        for e in defined {
            if pass.parts.contains_key(&e) && placed.insert(e.clone()) {
                body.push(pass.partition_stmt(&e, s.span));
            }
        }
    }
    if let Some(e) = pass.parts.keys().find(|e| !placed.contains(*e)) {
        return Err(Error::new(
            ErrorKind::NotSupported,
            None,
            format!("extent `{e}` of distributed data is not defined at function level"),
        ));
    }

    let rank_local: BTreeSet<Var> = pass.parts.values().flat_map(|(a, b)| [a.clone(), b.clone()]).collect();
    let func = FunctionIR { name: f.name.clone(), params: f.params.clone(), body, symbols: pass.symbols };
    check_rebased(&func, &distributed, &rank_local)?;
    Ok(SpmdProgram { func, distributed, rank_local })
}

impl Pass<'_> {
    fn partition_stmt(&self, e: &Extent, span: Span) -> Stmt {
        let (start, size) = self.parts[e].clone();
        Stmt::new(StmtKind::Partition { extent: e.clone(), start, size }, span)
    }

    fn is_dist(&self, a: &str) -> bool {
        self.f.is_array(a) && self.env.array(a).is_1d()
    }

    fn part_of(&self, a: &str) -> &(Var, Var) {
        let t = self.f.array_type(a).expect("distributed arrays are typed");
        &self.parts[t.last_dim()]
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<Vec<Stmt>> {
        let mut out = Vec::new();
        for s in stmts {
            self.stmt(s, &mut out)?;
        }
        Ok(out)
    }

    fn no_dist_access(&self, stmts: &[Stmt], span: Span, what: &str) -> Result<()> {
        if let Some(a) = array_accesses(stmts).into_iter().find(|a| self.is_dist(&a.array)) {
            let verb = if a.write { "writes" } else { "reads" };
            return Err(unsupported(span, format!("{what} {verb} elements of distributed `{}`", a.array)));
        }
        Ok(())
    }

    fn stmt(&mut self, s: &Stmt, out: &mut Vec<Stmt>) -> Result<()> {
        let sp = s.span;
        let with = |kind| Stmt { kind, span: sp, tag: s.tag };
        let comm = |kind| Stmt::new(kind, sp);
        match &s.kind {
            StmtKind::Alloc { array, dims } if self.is_dist(array) => {
                let (_, size) = self.part_of(array).clone();
                out.push(with(StmtKind::LocalAlloc { array: array.clone(), dims: dims.clone(), local_size: size }));
            }
            StmtKind::DataSource { array, dataset, file } => {
                if self.is_dist(array) {
                    let (start, size) = self.part_of(array).clone();
                    out.push(with(StmtKind::BlockRead {
                        array: array.clone(),
                        dataset: dataset.clone(),
                        file: file.clone(),
                        start,
                        size,
                    }));
                } else {
                    out.push(comm(StmtKind::OnRoot(Box::new(s.clone()))));
                    out.push(comm(StmtKind::Bcast { var: array.clone(), root: 0 }));
                }
            }
            StmtKind::DataSink { array, dataset, file } => {
                if self.is_dist(array) {
                    let (start, size) = self.part_of(array).clone();
                    out.push(with(StmtKind::BlockWrite {
                        array: array.clone(),
                        dataset: dataset.clone(),
                        file: file.clone(),
                        start,
                        size,
                    }));
                } else {
                    out.push(comm(StmtKind::OnRoot(Box::new(s.clone()))));
                }
            }
            StmtKind::For { var, lo, hi, body } => {
                let body = self.block(body)?;
                out.push(with(StmtKind::For { var: var.clone(), lo: lo.clone(), hi: hi.clone(), body }));
            }
            StmtKind::Parfor(p) => {
                if self.env.parfor(p.id).is_1d() {
                    let q = self.rebase(p, sp)?;
                    out.push(with(StmtKind::Parfor(Box::new(q))));
                    for r in &p.reductions {
                        out.push(comm(StmtKind::Allreduce { var: r.var.clone(), op: r.op }));
                    }
                } else {
                    self.no_dist_access(&p.body, sp, &format!("replicated parfor {}", p.id))?;
                    out.push(s.clone());
                }
            }
            StmtKind::Gemm { out: o, x, y, .. } => {
                let info =
                    self.env.gemm(o, sp).ok_or_else(|| Error::internal(format!("no analysis for product `{o}`")))?;
                out.push(s.clone());
                if info.needs_allreduce {
                    out.push(comm(StmtKind::Allreduce { var: o.clone(), op: ReduceOp::Sum }));
                } else if [o, x, y].iter().any(|a| self.is_dist(a)) && !self.is_dist(o) {
                    return Err(unsupported(sp, format!("product into replicated `{o}` from distributed operands")));
                }
            }
            StmtKind::Call { name, args, known, .. } => {
                let dist_arg = args.iter().find_map(|a| a.as_var().filter(|v| self.is_dist(v)));
                if let Some(a) = dist_arg {
                    if !(*known && name == "reshape") {
                        return Err(unsupported(sp, format!("`{name}` applied to distributed `{a}`")));
                    }
                }
                out.push(s.clone());
            }
            StmtKind::ArrayWrite { .. } | StmtKind::ReduceUpdate { .. } | StmtKind::Assign { .. } => {
                self.no_dist_access(std::slice::from_ref(s), sp, "serial code")?;
                out.push(s.clone());
            }
            _ => out.push(s.clone()),
        }
        Ok(())
    }

    /// Restrict a 1D_B parfor to this rank's iterations and rebase every
    /// access to distributed data: `A[.., i]` becomes `A[.., i - mystart]`.
    fn rebase(&self, p: &Parfor, sp: Span) -> Result<Parfor> {
        let last = p.loops.last().expect("parfor has loops");
        let ext = Extent::from_expr(&last.hi).expect("checked in distribute");
        let (start, size) = self.parts[&ext].clone();
        let (copies, _) = index_aliases(&p.body, &last.var);
        for a in array_accesses(&p.body) {
            if !self.is_dist(&a.array) {
                if a.write && !p.reductions.iter().any(|r| r.var == a.array) && self.f.is_array(&a.array) {
                    return Err(unsupported(
                        sp,
                        format!("distributed parfor {} writes replicated `{}` outside a reduction", p.id, a.array),
                    ));
                }
                continue;
            }
            let t = self.f.array_type(&a.array).expect("typed");
            if t.last_dim() != &ext {
                return Err(unsupported(
                    sp,
                    format!(
                        "parfor {} runs over `{ext}` but `{}` is partitioned along `{}`",
                        p.id,
                        a.array,
                        t.last_dim()
                    ),
                ));
            }
            if !matches!(a.index.last(), Some(Expr::Var(v)) if copies.contains(v)) {
                return Err(unsupported(sp, format!("`{}` is indexed across partitions in parfor {}", a.array, p.id)));
            }
        }
        let mut q = p.clone();
        let l = q.loops.last_mut().expect("parfor has loops");
        l.lo = Expr::bin(BinOp::Add, Expr::var(start.clone()), Expr::i64(1));
        l.hi = Expr::bin(BinOp::Add, Expr::var(start.clone()), Expr::var(size));
        let shift = |idx: &mut Vec<Expr>| {
            if let Some(e) = idx.last_mut() {
                *e = Expr::bin(BinOp::Sub, e.clone(), Expr::var(start.clone()));
            }
        };
        for_each_stmt_mut(&mut q.body, &mut |s| {
            match &mut s.kind {
                StmtKind::ArrayWrite { array, index, .. } if self.is_dist(array) => shift(index),
                StmtKind::ReduceUpdate { target, index, .. } if self.is_dist(target) && !index.is_empty() => {
                    shift(index)
                }
                _ => {}
            }
            for e in stmt_exprs_mut(s) {
                rewrite_expr(e, &mut |x| {
                    if let Expr::Read { array, index } = x {
                        if self.is_dist(array) {
                            shift(index);
                        }
                    }
                });
            }
        });
        Ok(q)
    }
}

/// Every access to a distributed array must sit in a parfor and subtract
/// a partition start in its last index.
fn check_rebased(f: &FunctionIR, distributed: &BTreeSet<Var>, rank_local: &BTreeSet<Var>) -> Result<()> {
    let rebased = |e: &Expr| matches!(e, Expr::Bin(BinOp::Sub, _, b) if matches!(b.as_ref(), Expr::Var(v) if rank_local.contains(v)));
    let mut bad = None;
    for_each_stmt(&f.body, &mut |s| {
        if let StmtKind::Parfor(p) = &s.kind {
            for a in array_accesses(&p.body) {
                if distributed.contains(&a.array) && !a.index.last().is_some_and(rebased) {
                    bad.get_or_insert((s.span, a.array));
                }
            }
        }
    });
    match bad {
        Some((sp, a)) => Err(Error::new(ErrorKind::Internal, Some(sp), format!("access to `{a}` was not rebased"))),
        None => Ok(()),
    }
}
