//! Traversal helpers over statements and expressions.

use std::collections::{BTreeMap, BTreeSet};

use super::{ArrayOp, Expr, Extent, Operand, Stmt, StmtKind, Var};

/// Visit every statement, pre-order, descending into loop, parfor and
/// comprehension bodies.
pub fn for_each_stmt<'a>(stmts: &'a [Stmt], f: &mut dyn FnMut(&'a Stmt)) {
    for s in stmts {
        f(s);
        for child in child_blocks(s) {
            for_each_stmt(child, f);
        }
    }
}

pub fn for_each_stmt_mut(stmts: &mut [Stmt], f: &mut dyn FnMut(&mut Stmt)) {
    for s in stmts.iter_mut() {
        f(s);
        for child in child_blocks_mut(s) {
            for_each_stmt_mut(child, f);
        }
    }
}

pub fn child_blocks(s: &Stmt) -> Vec<&[Stmt]> {
    match &s.kind {
        StmtKind::For { body, .. } => vec![body.as_slice()],
        StmtKind::Parfor(p) => vec![p.body.as_slice()],
        StmtKind::ArrayOp { op: ArrayOp::Comprehension { body, .. }, .. } => vec![body.as_slice()],
        StmtKind::OnRoot(inner) => vec![std::slice::from_ref(inner.as_ref())],
        _ => vec![],
    }
}

pub fn child_blocks_mut(s: &mut Stmt) -> Vec<&mut Vec<Stmt>> {
    match &mut s.kind {
        StmtKind::For { body, .. } => vec![body],
        StmtKind::Parfor(p) => vec![&mut p.body],
        StmtKind::ArrayOp { op: ArrayOp::Comprehension { body, .. }, .. } => vec![body],
        _ => vec![],
    }
}

/// The expressions directly owned by a statement (not those of nested
/// statements).
pub fn stmt_exprs(s: &Stmt) -> Vec<&Expr> {
    let mut out = Vec::new();
    match &s.kind {
        StmtKind::Assign { rhs, .. } => out.push(rhs),
        StmtKind::ArrayOp { op, .. } => match op {
            ArrayOp::Map { args, .. } => {
                for a in args {
                    if let Operand::Scalar(e) = a {
                        out.push(e);
                    }
                }
            }
            ArrayOp::Reduce { .. } => {}
            ArrayOp::Comprehension { loops, .. } => {
                for l in loops {
                    out.push(&l.lo);
                    out.push(&l.hi);
                }
            }
        },
        StmtKind::ArrayWrite { index, value, .. } => {
            out.extend(index.iter());
            out.push(value);
        }
        StmtKind::ReduceUpdate { index, value, .. } => {
            out.extend(index.iter());
            out.push(value);
        }
        StmtKind::SizeQuery { file, .. }
        | StmtKind::DataSource { file, .. }
        | StmtKind::DataSink { file, .. }
        | StmtKind::BlockRead { file, .. }
        | StmtKind::BlockWrite { file, .. } => out.push(file),
        StmtKind::Call { args, .. } => out.extend(args.iter()),
        StmtKind::For { lo, hi, .. } => {
            out.push(lo);
            out.push(hi);
        }
        StmtKind::Parfor(p) => {
            for l in &p.loops {
                out.push(&l.lo);
                out.push(&l.hi);
            }
        }
        StmtKind::CheckpointRestore { default_start, .. } => out.push(default_start),
        _ => {}
    }
    out
}

pub fn stmt_exprs_mut(s: &mut Stmt) -> Vec<&mut Expr> {
    let mut out = Vec::new();
    match &mut s.kind {
        StmtKind::Assign { rhs, .. } => out.push(rhs),
        StmtKind::ArrayOp { op, .. } => match op {
            ArrayOp::Map { args, .. } => {
                for a in args {
                    if let Operand::Scalar(e) = a {
                        out.push(e);
                    }
                }
            }
            ArrayOp::Reduce { .. } => {}
            ArrayOp::Comprehension { loops, .. } => {
                for l in loops {
                    out.push(&mut l.lo);
                    out.push(&mut l.hi);
                }
            }
        },
        StmtKind::ArrayWrite { index, value, .. } | StmtKind::ReduceUpdate { index, value, .. } => {
            out.extend(index.iter_mut());
            out.push(value);
        }
        StmtKind::SizeQuery { file, .. }
        | StmtKind::DataSource { file, .. }
        | StmtKind::DataSink { file, .. }
        | StmtKind::BlockRead { file, .. }
        | StmtKind::BlockWrite { file, .. } => out.push(file),
        StmtKind::Call { args, .. } => out.extend(args.iter_mut()),
        StmtKind::For { lo, hi, .. } => {
            out.push(lo);
            out.push(hi);
        }
        StmtKind::Parfor(p) => {
            for l in &mut p.loops {
                out.push(&mut l.lo);
                out.push(&mut l.hi);
            }
        }
        StmtKind::CheckpointRestore { default_start, .. } => out.push(default_start),
        _ => {}
    }
    out
}

/// Visit an expression tree, pre-order.
pub fn for_each_expr<'a>(e: &'a Expr, f: &mut dyn FnMut(&'a Expr)) {
    f(e);
    match e {
        Expr::Lit(_) | Expr::Var(_) => {}
        Expr::Read { index, .. } => index.iter().for_each(|i| for_each_expr(i, f)),
        Expr::RandAt { index, .. } => index.iter().for_each(|i| for_each_expr(i, f)),
        Expr::Bin(_, a, b) => {
            for_each_expr(a, f);
            for_each_expr(b, f);
        }
        Expr::Un(_, a) => for_each_expr(a, f),
        Expr::Select(c, a, b) => {
            for_each_expr(c, f);
            for_each_expr(a, f);
            for_each_expr(b, f);
        }
    }
}

/// Rewrite an expression tree bottom-up.
pub fn rewrite_expr(e: &mut Expr, f: &mut dyn FnMut(&mut Expr)) {
    match e {
        Expr::Lit(_) | Expr::Var(_) => {}
        Expr::Read { index, .. } | Expr::RandAt { index, .. } => index.iter_mut().for_each(|i| rewrite_expr(i, f)),
        Expr::Bin(_, a, b) => {
            rewrite_expr(a, f);
            rewrite_expr(b, f);
        }
        Expr::Un(_, a) => rewrite_expr(a, f),
        Expr::Select(c, a, b) => {
            rewrite_expr(c, f);
            rewrite_expr(a, f);
            rewrite_expr(b, f);
        }
    }
    f(e);
}

/// Free scalar/array variable names referenced by an expression.
pub fn expr_vars(e: &Expr) -> BTreeSet<Var> {
    let mut out = BTreeSet::new();
    for_each_expr(e, &mut |x| match x {
        Expr::Var(v) => {
            out.insert(v.clone());
        }
        Expr::Read { array, .. } => {
            out.insert(array.clone());
        }
        Expr::RandAt { dims, .. } => {
            for d in dims {
                if let Extent::Sym(s) = d {
                    out.insert(s.clone());
                }
            }
        }
        _ => {}
    });
    out
}

/// One array element access found in a statement list.
#[derive(Clone, Debug, PartialEq)]
pub struct Access {
    pub array: Var,
    pub index: Vec<Expr>,
    pub write: bool,
}

/// Every array element access in `stmts`, including nested bodies, in
/// program order.
pub fn array_accesses(stmts: &[Stmt]) -> Vec<Access> {
    let mut out = Vec::new();
    for_each_stmt(stmts, &mut |s| {
        match &s.kind {
            StmtKind::ArrayWrite { array, index, .. } => {
                out.push(Access { array: array.clone(), index: index.clone(), write: true })
            }
            StmtKind::ReduceUpdate { target, index, .. } if !index.is_empty() => {
                out.push(Access { array: target.clone(), index: index.clone(), write: true })
            }
            _ => {}
        }
        for e in stmt_exprs(s) {
            for_each_expr(e, &mut |x| {
                if let Expr::Read { array, index } = x {
                    out.push(Access { array: array.clone(), index: index.clone(), write: false });
                }
            });
        }
    });
    out
}

/// Rename variables everywhere in a statement list (definitions, uses,
/// loop variables, extents).
pub fn rename_in_stmts(stmts: &mut [Stmt], map: &BTreeMap<Var, Var>) {
    if map.is_empty() {
        return;
    }
    let ren = |v: &mut Var| {
        if let Some(n) = map.get(v.as_str()) {
            *v = n.clone();
        }
    };
    for_each_stmt_mut(stmts, &mut |s| {
        for e in stmt_exprs_mut(s) {
            rename_in_expr(e, map);
        }
        match &mut s.kind {
            StmtKind::Assign { lhs, .. } => ren(lhs),
            StmtKind::ArrayOp { lhs, op } => {
                ren(lhs);
                match op {
                    ArrayOp::Map { args, .. } => {
                        for a in args {
                            if let Operand::Array(v) = a {
                                ren(v);
                            }
                        }
                    }
                    ArrayOp::Reduce { arg, .. } => ren(arg),
                    ArrayOp::Comprehension { loops, .. } => loops.iter_mut().for_each(|l| ren(&mut l.var)),
                }
            }
            StmtKind::ArrayWrite { array, .. } => ren(array),
            StmtKind::ReduceUpdate { target, .. } => ren(target),
            StmtKind::Gemm { out, x, y, .. } => {
                ren(out);
                ren(x);
                ren(y);
            }
            StmtKind::Alloc { array, dims } => {
                ren(array);
                rename_extents(dims, map);
            }
            StmtKind::LocalAlloc { array, dims, local_size } => {
                ren(array);
                rename_extents(dims, map);
                ren(local_size);
            }
            StmtKind::SizeQuery { outs, .. } => outs.iter_mut().for_each(ren),
            StmtKind::DataSource { array, .. } | StmtKind::DataSink { array, .. } => ren(array),
            StmtKind::BlockRead { array, start, size, .. } | StmtKind::BlockWrite { array, start, size, .. } => {
                ren(array);
                ren(start);
                ren(size);
            }
            StmtKind::Call { result, .. } => {
                if let Some(r) = result {
                    ren(r);
                }
            }
            StmtKind::For { var, .. } => ren(var),
            StmtKind::Parfor(p) => {
                p.loops.iter_mut().for_each(|l| ren(&mut l.var));
                p.reductions.iter_mut().for_each(|r| ren(&mut r.var));
            }
            StmtKind::Return { vars } => vars.iter_mut().for_each(ren),
            StmtKind::Partitioned { array } => ren(array),
            StmtKind::Checkpoint { vars, index_var } => {
                vars.iter_mut().for_each(ren);
                ren(index_var);
            }
            StmtKind::CheckpointRestore { vars, index_var, start_var, .. } => {
                vars.iter_mut().for_each(ren);
                ren(index_var);
                ren(start_var);
            }
            StmtKind::Partition { extent, start, size } => {
                rename_extent(extent, map);
                ren(start);
                ren(size);
            }
            StmtKind::Allreduce { var, .. } | StmtKind::Bcast { var, .. } => ren(var),
            StmtKind::OnRoot(inner) => rename_in_stmts(std::slice::from_mut(inner.as_mut()), map),
            StmtKind::CheckpointCleanup => {}
        }
    });
}

pub fn rename_in_expr(e: &mut Expr, map: &BTreeMap<Var, Var>) {
    rewrite_expr(e, &mut |x| match x {
        Expr::Var(v) => {
            if let Some(n) = map.get(v.as_str()) {
                *v = n.clone();
            }
        }
        Expr::Read { array, .. } => {
            if let Some(n) = map.get(array.as_str()) {
                *array = n.clone();
            }
        }
        Expr::RandAt { dims, .. } => rename_extents(dims, map),
        _ => {}
    });
}

pub fn rename_extent(e: &mut Extent, map: &BTreeMap<Var, Var>) {
    if let Extent::Sym(s) = e {
        if let Some(n) = map.get(s.as_str()) {
            *s = n.clone();
        }
    }
}

pub fn rename_extents(dims: &mut [Extent], map: &BTreeMap<Var, Var>) {
    dims.iter_mut().for_each(|d| rename_extent(d, map));
}

/// Read and write sets of a statement, at variable granularity. Writes
/// are split into full definitions (every element overwritten before any
/// read) and partial updates.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Effects {
    pub reads: BTreeSet<Var>,
    pub defs: BTreeSet<Var>,
    pub updates: BTreeSet<Var>,
}

impl Effects {
    pub fn writes(&self) -> impl Iterator<Item = &Var> {
        self.defs.iter().chain(self.updates.iter())
    }
}

/// Effects of one statement (including nested bodies) as seen from the
/// enclosing block. Variables local to a parfor/comprehension body are
/// not reported.
pub fn effects(s: &Stmt) -> Effects {
    let mut eff = Effects::default();
    match &s.kind {
        StmtKind::Assign { lhs, rhs } => {
            eff.reads.extend(expr_vars(rhs));
            eff.defs.insert(lhs.clone());
        }
        StmtKind::ArrayOp { lhs, op } => {
            match op {
                ArrayOp::Map { args, .. } => {
                    for a in args {
                        match a {
                            Operand::Array(v) => {
                                eff.reads.insert(v.clone());
                            }
                            Operand::Scalar(e) => eff.reads.extend(expr_vars(e)),
                        }
                    }
                }
                ArrayOp::Reduce { arg, .. } => {
                    eff.reads.insert(arg.clone());
                }
                ArrayOp::Comprehension { loops, body } => {
                    let inner = block_effects(body);
                    let locals = local_names(body, loops.iter().map(|l| l.var.as_str()));
                    for l in loops {
                        eff.reads.extend(expr_vars(&l.lo));
                        eff.reads.extend(expr_vars(&l.hi));
                    }
                    eff.reads.extend(inner.reads.into_iter().filter(|v| !locals.contains(v) && v != lhs));
                }
            }
            eff.defs.insert(lhs.clone());
        }
        StmtKind::ArrayWrite { array, index, value } => {
            for e in index.iter().chain(std::iter::once(value)) {
                eff.reads.extend(expr_vars(e));
            }
            eff.updates.insert(array.clone());
        }
        StmtKind::ReduceUpdate { target, index, value, .. } => {
            for e in index.iter().chain(std::iter::once(value)) {
                eff.reads.extend(expr_vars(e));
            }
            eff.reads.insert(target.clone());
            eff.updates.insert(target.clone());
        }
        StmtKind::Gemm { out, x, y, .. } => {
            eff.reads.insert(x.clone());
            eff.reads.insert(y.clone());
            eff.defs.insert(out.clone());
        }
        StmtKind::Alloc { array, dims } | StmtKind::LocalAlloc { array, dims, .. } => {
            for d in dims {
                if let Extent::Sym(v) = d {
                    eff.reads.insert(v.clone());
                }
            }
            eff.defs.insert(array.clone());
        }
        StmtKind::SizeQuery { outs, file, .. } => {
            eff.reads.extend(expr_vars(file));
            eff.defs.extend(outs.iter().cloned());
        }
        StmtKind::DataSource { array, file, .. } | StmtKind::BlockRead { array, file, .. } => {
            eff.reads.extend(expr_vars(file));
            eff.defs.insert(array.clone());
        }
        StmtKind::DataSink { array, file, .. } | StmtKind::BlockWrite { array, file, .. } => {
            eff.reads.extend(expr_vars(file));
            eff.reads.insert(array.clone());
        }
        StmtKind::Call { result, args, .. } => {
            for a in args {
                eff.reads.extend(expr_vars(a));
            }
            if let Some(r) = result {
                eff.defs.insert(r.clone());
            } else {
                // Opaque calls may mutate their array arguments.
                for a in args {
                    if let Expr::Var(v) = a {
                        eff.updates.insert(v.clone());
                    }
                }
            }
        }
        StmtKind::For { var, lo, hi, body } => {
            eff.reads.extend(expr_vars(lo));
            eff.reads.extend(expr_vars(hi));
            let inner = block_effects(body);
            eff.reads.extend(inner.reads.into_iter().filter(|v| v != var));
            // A loop may run zero times: nothing it writes is a definite def.
            eff.updates.extend(inner.defs);
            eff.updates.extend(inner.updates);
            eff.updates.insert(var.clone());
        }
        StmtKind::Parfor(p) => {
            let inner = block_effects(&p.body);
            let locals = local_names(&p.body, p.loop_vars());
            for l in &p.loops {
                eff.reads.extend(expr_vars(&l.lo));
                eff.reads.extend(expr_vars(&l.hi));
            }
            let red: BTreeSet<&str> = p.reductions.iter().map(|r| r.var.as_str()).collect();
            eff.reads.extend(inner.reads.into_iter().filter(|v| !locals.contains(v) && !red.contains(v.as_str())));
            for r in &p.reductions {
                eff.defs.insert(r.var.clone());
            }
            for w in inner.defs.into_iter().chain(inner.updates) {
                if !locals.contains(&w) && !red.contains(w.as_str()) {
                    eff.updates.insert(w);
                }
            }
        }
        StmtKind::Return { vars } => eff.reads.extend(vars.iter().cloned()),
        StmtKind::Partitioned { .. } | StmtKind::CheckpointCleanup => {}
        StmtKind::Checkpoint { vars, index_var } => {
            eff.reads.extend(vars.iter().cloned());
            eff.reads.insert(index_var.clone());
        }
        StmtKind::CheckpointRestore { vars, start_var, default_start, .. } => {
            eff.reads.extend(expr_vars(default_start));
            eff.updates.extend(vars.iter().cloned());
            eff.defs.insert(start_var.clone());
        }
        StmtKind::Partition { extent, start, size } => {
            if let Extent::Sym(v) = extent {
                eff.reads.insert(v.clone());
            }
            eff.defs.insert(start.clone());
            eff.defs.insert(size.clone());
        }
        StmtKind::Allreduce { var, .. } | StmtKind::Bcast { var, .. } => {
            eff.reads.insert(var.clone());
            eff.updates.insert(var.clone());
        }
        StmtKind::OnRoot(inner) => {
            let e = effects(inner);
            eff.reads.extend(e.reads);
            eff.updates.extend(e.defs);
            eff.updates.extend(e.updates);
        }
    }
    eff
}

/// Aggregate effects of a straight-line block: a variable read before any
/// definition in the block counts as a read of the block.
pub fn block_effects(stmts: &[Stmt]) -> Effects {
    let mut eff = Effects::default();
    for s in stmts {
        let e = effects(s);
        for r in e.reads {
            if !eff.defs.contains(&r) {
                eff.reads.insert(r);
            }
        }
        eff.defs.extend(e.defs);
        eff.updates.extend(e.updates);
    }
    let defs = eff.defs.clone();
    eff.updates.retain(|v| !defs.contains(v));
    eff
}

/// Scalars assigned inside a body plus the given loop variables; these are
/// private to one iteration.
pub fn local_names<'a>(body: &[Stmt], loop_vars: impl Iterator<Item = &'a str>) -> BTreeSet<Var> {
    let mut out: BTreeSet<Var> = loop_vars.map(str::to_string).collect();
    for_each_stmt(body, &mut |s| match &s.kind {
        StmtKind::Assign { lhs, .. } => {
            out.insert(lhs.clone());
        }
        StmtKind::For { var, .. } => {
            out.insert(var.clone());
        }
        _ => {}
    });
    out
}
