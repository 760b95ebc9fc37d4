//! Parfor fusion and the two locality heuristics: matrix products become
//! loop nests over the long dimension, and replicated parfors that sweep
//! distributed data are fissioned and interchanged so the sweep is outermost.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::analysis::{analyze_with, DistEnv, Options};
use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{
    array_accesses, block_effects, effects, expr_vars, for_each_stmt, for_each_stmt_mut, local_names, rename_in_expr,
    rename_in_stmts, rewrite_expr, stmt_exprs_mut, Access, Effects,
};
use crate::ir::*;

pub const GEMM_TO_LOOPS: &str = "gemm-to-loops";
pub const REP_INTERCHANGE: &str = "rep-interchange";

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct FusionReport {
    /// Parfors entering the fusion sweep, i.e. after both heuristics ran.
    pub parfors_before: usize,
    pub parfors_after: usize,
    pub fused_groups: Vec<Vec<u32>>,
    pub heuristics_fired: Vec<(String, Span)>,
    /// Heuristic applications that were refused, with the reason.
    pub skipped: Vec<(String, Span, String)>,
    pub eliminated: Vec<Var>,
}

/// Run both heuristics, fuse, and re-analyze. `env` must be the converged
/// analysis of `f`; the returned environment describes the optimized `f`.
pub fn optimize(f: &mut FunctionIR, env: &DistEnv) -> Result<(DistEnv, FusionReport)> {
    let opts = Options::default();
    let mut report = FusionReport::default();

    let mut next = f.next_parfor_id();
    let mut body = std::mem::take(&mut f.body);
    apply_gemm_to_loops(f, &mut body, env, &mut next, &mut report);
    f.body = body;
    let env = analyze_with(f, Some(env), &opts)?;

    let mut body = std::mem::take(&mut f.body);
    apply_interchange(f, &mut body, &env, &mut next, &mut report);
    f.body = body;
    let env = analyze_with(f, Some(&env), &opts)?;

    report.parfors_before = f.parfors().len();
    let mut groups = BTreeMap::new();
    fuse_block(&mut f.body, &env, &mut groups);
    report.fused_groups = groups.into_values().filter(|g: &Vec<u32>| g.len() > 1).collect();
    report.eliminated = eliminate_intermediates(f);
    report.parfors_after = f.parfors().len();
    let env = analyze_with(f, Some(&env), &opts)?;
    Ok((env, report))
}

// ---------------------------------------------------------------------------
// Matrix products to loops

fn matrix_dims(f: &FunctionIR, a: &str) -> Option<(Extent, Extent)> {
    let t = f.array_type(a)?;
    match t.dims.as_slice() {
        [r] => Some((r.clone(), Extent::Const(1))),
        [r, c] => Some((r.clone(), c.clone())),
        _ => None,
    }
}

fn element(f: &FunctionIR, a: &str, t: bool, r: &str, c: &str) -> Expr {
    let (r, c) = if t { (c, r) } else { (r, c) };
    let index = if f.array_type(a).is_some_and(|t| t.ndims() == 1) {
        vec![Expr::var(r)]
    } else {
        vec![Expr::var(r), Expr::var(c)]
    };
    Expr::read(a, index)
}

fn index_of(f: &FunctionIR, a: &str, r: &str, c: &str) -> Vec<Expr> {
    match element(f, a, false, r, c) {
        Expr::Read { index, .. } => index,
        _ => unreachable!(),
    }
}

fn fresh_scalar(f: &mut FunctionIR, base: &str, kind: ScalarKind) -> Var {
    let v = f.fresh(base);
    f.symbols.insert(v.clone(), Type::Scalar(kind));
    v
}

fn new_parfor(
    next: &mut u32,
    loops: Vec<LoopNest>,
    reductions: Vec<Reduction>,
    body: Vec<Stmt>,
    origin: PatternTag,
) -> Parfor {
    *next += 1;
    Parfor { id: ParforId(*next - 1), loops, reductions, body, origin }
}

fn parfor_stmt(p: Parfor, span: Span) -> Stmt {
    let tag = Some(p.origin);
    Stmt { kind: StmtKind::Parfor(Box::new(p)), span, tag }
}

/// Replace a matrix product that has a distributed input by an equivalent
/// parfor. Products whose result is summed across samples become a
/// reduction over the sample loop; products distributed along their
/// result become one dot product per result element. Returns `None` when
/// the product is left alone.
pub fn gemm_to_loops(f: &mut FunctionIR, s: &Stmt, env: &DistEnv, next: &mut u32) -> Option<Stmt> {
    let StmtKind::Gemm { out, x, xt, y, yt } = &s.kind else { return None };
    let (out, x, y, xt, yt) = (out.as_str(), x.as_str(), y.as_str(), *xt, *yt);
    let info = env.gemm(out, s.span)?;
    if !(info.x.is_1d() || info.y.is_1d()) || out == x || out == y {
        return None;
    }
    let (xr, xc) = matrix_dims(f, x)?;
    let (yr, yc) = matrix_dims(f, y)?;
    matrix_dims(f, out)?;
    let (m, k) = if xt { (xc, xr) } else { (xr, xc) };
    let n = if yt { yr } else { yc };
    let span = s.span;
    let one = || Expr::i64(1);
    if info.needs_allreduce {
        let im = fresh_scalar(f, "i", ScalarKind::I64);
        let ik = fresh_scalar(f, "i", ScalarKind::I64);
        let d = fresh_scalar(f, "i", ScalarKind::I64);
        let prod = Expr::bin(BinOp::Mul, element(f, x, xt, &im, &ik), element(f, y, yt, &ik, &d));
        let update = Stmt::new(
            StmtKind::ReduceUpdate {
                target: out.into(),
                index: index_of(f, out, &im, &d),
                op: ReduceOp::Sum,
                value: prod,
            },
            span,
        );
        let inner = Stmt::new(StmtKind::For { var: d, lo: one(), hi: n.to_expr(), body: vec![update] }, span);
        let p = new_parfor(
            next,
            vec![LoopNest { var: im, lo: one(), hi: m.to_expr() }, LoopNest { var: ik, lo: one(), hi: k.to_expr() }],
            vec![Reduction { var: out.into(), op: ReduceOp::Sum }],
            vec![inner],
            PatternTag::Gemm,
        );
        return Some(parfor_stmt(p, span));
    }
    if !info.out.is_1d() {
        return None;
    }
    let im = fresh_scalar(f, "i", ScalarKind::I64);
    let inn = fresh_scalar(f, "i", ScalarKind::I64);
    let kk = fresh_scalar(f, "k", ScalarKind::I64);
    let acc = fresh_scalar(f, "acc", ScalarKind::F64);
    let prod = Expr::bin(BinOp::Mul, element(f, x, xt, &im, &kk), element(f, y, yt, &kk, &inn));
    let body = vec![
        Stmt::new(StmtKind::Assign { lhs: acc.clone(), rhs: Expr::f64(0.0) }, span),
        Stmt::new(
            StmtKind::For {
                var: kk,
                lo: one(),
                hi: k.to_expr(),
                body: vec![Stmt::new(
                    StmtKind::Assign { lhs: acc.clone(), rhs: Expr::bin(BinOp::Add, Expr::var(acc.clone()), prod) },
                    span,
                )],
            },
            span,
        ),
        Stmt::new(
            StmtKind::ArrayWrite { array: out.into(), index: index_of(f, out, &im, &inn), value: Expr::var(acc) },
            span,
        ),
    ];
    let p = new_parfor(
        next,
        vec![LoopNest { var: im, lo: one(), hi: m.to_expr() }, LoopNest { var: inn, lo: one(), hi: n.to_expr() }],
        vec![],
        body,
        PatternTag::Gemm,
    );
    Some(parfor_stmt(p, span))
}

fn apply_gemm_to_loops(
    f: &mut FunctionIR,
    stmts: &mut [Stmt],
    env: &DistEnv,
    next: &mut u32,
    report: &mut FusionReport,
) {
    for s in stmts.iter_mut() {
        if let StmtKind::For { body, .. } = &mut s.kind {
            apply_gemm_to_loops(f, body, env, next, report);
        } else if let Some(r) = gemm_to_loops(f, s, env, next) {
            report.heuristics_fired.push((GEMM_TO_LOOPS.into(), s.span));
            *s = r;
        }
    }
}

// ---------------------------------------------------------------------------
// Interchange of replicated parfors

fn unsafe_at(span: Span, msg: impl Into<String>) -> Error {
    Error::at(ErrorKind::InterchangeUnsafe, span, msg)
}

fn is_identity(e: &Expr, op: ReduceOp) -> bool {
    match e {
        Expr::Lit(Lit::F64(v)) => *v == op.identity(),
        Expr::Lit(Lit::I64(v)) => *v as f64 == op.identity(),
        _ => false,
    }
}

fn mentions_name(stmts: &[Stmt], name: &str) -> bool {
    let e = block_effects(stmts);
    e.reads.contains(name) || e.defs.contains(name) || e.updates.contains(name)
}

/// A sweep over distributed data inside a replicated parfor body: a
/// top-level `for` whose body reads a 1D_B array at the loop variable.
fn is_traversal(s: &Stmt, env: &DistEnv) -> bool {
    let StmtKind::For { var, body, .. } = &s.kind else { return false };
    array_accesses(body)
        .iter()
        .any(|a| env.array(&a.array).is_1d() && matches!(a.index.last(), Some(Expr::Var(v)) if v == var))
}

struct Sweep {
    at: usize,
    var: Var,
    lo: Expr,
    hi: Expr,
    /// `(acc, op, term, init statement index)`
    updates: Vec<(Var, ReduceOp, Expr, usize)>,
}

/// Fission a replicated parfor into one parfor per distributed sweep plus
/// a remainder, and make each sweep the outermost loop: the replicated
/// loops move inside and every accumulator becomes an array indexed by
/// them. Returns `Ok(None)` when the parfor has no such sweep.
pub fn interchange_rep_parfor(
    f: &mut FunctionIR,
    p: &Parfor,
    span: Span,
    env: &DistEnv,
    next: &mut u32,
) -> Result<Option<Vec<Stmt>>> {
    if !env.parfor(p.id).is_rep() || !p.body.iter().any(|s| is_traversal(s, env)) {
        return Ok(None);
    }
    if !p.reductions.is_empty() {
        return Err(unsafe_at(span, format!("parfor {} carries its own reductions", p.id)));
    }
    let mut dims = Vec::new();
    for l in &p.loops {
        let ext = Extent::from_expr(&l.hi).filter(|_| l.lo == Expr::i64(1));
        dims.push(ext.ok_or_else(|| unsafe_at(span, format!("loop `{}` does not run over a whole extent", l.var)))?);
    }
    let loop_vars: BTreeSet<Var> = p.loop_vars().map(str::to_string).collect();
    let locals: BTreeSet<Var> =
        local_names(&p.body, std::iter::empty()).into_iter().filter(|v| !loop_vars.contains(v)).collect();
    let written: BTreeSet<Var> = array_accesses(&p.body).into_iter().filter(|a| a.write).map(|a| a.array).collect();

    let mut sweeps = Vec::new();
    for (at, s) in p.body.iter().enumerate() {
        if !is_traversal(s, env) {
            continue;
        }
        let StmtKind::For { var, lo, hi, body } = &s.kind else { unreachable!() };
        let bound_vars: BTreeSet<Var> = expr_vars(lo).into_iter().chain(expr_vars(hi)).collect();
        if bound_vars.iter().any(|v| locals.contains(v) || loop_vars.contains(v)) {
            return Err(unsafe_at(s.span, format!("bounds of `{var}` depend on the replicated iteration")));
        }
        let mut updates = Vec::new();
        for u in body {
            let StmtKind::Assign { lhs, rhs: Expr::Bin(bop, a, term) } = &u.kind else {
                return Err(unsafe_at(u.span, format!("sweep over `{var}` is not a pure accumulation")));
            };
            let op = ReduceOp::from_binop(*bop)
                .filter(|_| a.as_var() == Some(lhs.as_str()))
                .ok_or_else(|| unsafe_at(u.span, format!("`{lhs}` is not accumulated in the sweep over `{var}`")))?;
            let tv = expr_vars(term);
            if let Some(bad) = tv.iter().find(|v| (locals.contains(*v) && *v != var) || written.contains(*v)) {
                return Err(unsafe_at(
                    u.span,
                    format!("`{lhs}` depends on `{bad}`, which the replicated iteration updates"),
                ));
            }
            let init = p.body[..at]
                .iter()
                .rposition(|q| matches!(&q.kind, StmtKind::Assign { lhs: l, .. } if l == lhs))
                .filter(|&i| matches!(&p.body[i].kind, StmtKind::Assign { rhs, .. } if is_identity(rhs, op)))
                .ok_or_else(|| {
                    unsafe_at(u.span, format!("`{lhs}` does not start from the identity of {}", op.name()))
                })?;
            let between_or_after = p.body[init + 1..at].iter().chain(&p.body[at + 1..]).any(|q| {
                let e = effects(q);
                e.defs.contains(lhs) || e.updates.contains(lhs)
            }) || p.body[init + 1..at].iter().any(|q| effects(q).reads.contains(lhs));
            if between_or_after || updates.iter().any(|(v, ..): &(Var, _, _, _)| v == lhs) {
                return Err(unsafe_at(u.span, format!("`{lhs}` is used outside its sweep")));
            }
            updates.push((lhs.clone(), op, (**term).clone(), init));
        }
        sweeps.push(Sweep { at, var: var.clone(), lo: lo.clone(), hi: hi.clone(), updates });
    }
    let mut seen = BTreeSet::new();
    for s in &sweeps {
        for (acc, ..) in &s.updates {
            if !seen.insert(acc.clone()) {
                return Err(unsafe_at(span, format!("`{acc}` is accumulated by two sweeps")));
            }
        }
    }

    let index: Vec<Expr> = p.loops.iter().map(|l| Expr::var(l.var.clone())).collect();
    let mut out = Vec::new();
    let mut accs = BTreeMap::new();
    for s in &sweeps {
        for (acc, ..) in &s.updates {
            let elem = match f.ty(acc) {
                Some(Type::Scalar(k)) => *k,
                _ => ScalarKind::F64,
            };
            let arr = f.fresh(acc);
            f.symbols.insert(arr.clone(), Type::Array(ArrayType::new(elem, dims.clone())));
            out.push(Stmt::new(StmtKind::Alloc { array: arr.clone(), dims: dims.clone() }, span));
            accs.insert(acc.clone(), arr);
        }
    }
    let mut dropped = BTreeSet::new();
    for s in &sweeps {
        dropped.insert(s.at);
        let mut inner: Vec<Stmt> = s
            .updates
            .iter()
            .map(|(acc, op, term, init)| {
                dropped.insert(*init);
                Stmt::new(
                    StmtKind::ReduceUpdate {
                        target: accs[acc].clone(),
                        index: index.clone(),
                        op: *op,
                        value: term.clone(),
                    },
                    p.body[s.at].span,
                )
            })
            .collect();
        for l in &p.loops {
            inner = vec![Stmt::new(
                StmtKind::For { var: l.var.clone(), lo: l.lo.clone(), hi: l.hi.clone(), body: inner },
                span,
            )];
        }
        let reductions = s.updates.iter().map(|(acc, op, ..)| Reduction { var: accs[acc].clone(), op: *op }).collect();
        let q = new_parfor(
            next,
            vec![LoopNest { var: s.var.clone(), lo: s.lo.clone(), hi: s.hi.clone() }],
            reductions,
            inner,
            p.origin,
        );
        out.push(parfor_stmt(q, span));
    }
    let mut rest: Vec<Stmt> =
        p.body.iter().enumerate().filter(|(i, _)| !dropped.contains(i)).map(|(_, s)| s.clone()).collect();
    if !rest.is_empty() {
        for_each_stmt_mut(&mut rest, &mut |s| {
            for e in stmt_exprs_mut(s) {
                rewrite_expr(e, &mut |x| {
                    if let Expr::Var(v) = x {
                        if let Some(a) = accs.get(v.as_str()) {
                            *x = Expr::read(a.clone(), index.clone());
                        }
                    }
                });
            }
        });
        let r = Parfor { id: p.id, loops: p.loops.clone(), reductions: vec![], body: rest, origin: p.origin };
        out.push(parfor_stmt(r, span));
    }
    Ok(Some(out))
}

fn apply_interchange(
    f: &mut FunctionIR,
    stmts: &mut Vec<Stmt>,
    env: &DistEnv,
    next: &mut u32,
    report: &mut FusionReport,
) {
    let mut i = 0;
    while i < stmts.len() {
        if let StmtKind::For { body, .. } = &mut stmts[i].kind {
            apply_interchange(f, body, env, next, report);
        }
        if let StmtKind::Parfor(p) = &stmts[i].kind {
            let (p, span) = (p.as_ref().clone(), stmts[i].span);
            match interchange_rep_parfor(f, &p, span, env, next) {
                Ok(Some(new)) => {
                    report.heuristics_fired.push((REP_INTERCHANGE.into(), span));
                    let n = new.len();
                    stmts.splice(i..=i, new);
                    i += n;
                    continue;
                }
                Ok(None) => {}
                Err(e) => report.skipped.push((REP_INTERCHANGE.into(), span, e.message)),
            }
        }
        i += 1;
    }
}

// ---------------------------------------------------------------------------
// Fusion

fn names(stmts: &[Stmt]) -> BTreeSet<Var> {
    let e = block_effects(stmts);
    e.reads.into_iter().chain(e.defs).chain(e.updates).collect()
}

/// Every access to `array` pins each parfor loop variable at the same
/// index position, and the remaining positions only use values that are
/// the same in every iteration. Such accesses touch disjoint slices in
/// different iterations.
fn aligned(accs: &[&Access], loops: &[Var], fixed: &dyn Fn(&Expr) -> bool) -> bool {
    let pattern = |a: &Access| -> Vec<Option<usize>> {
        a.index
            .iter()
            .map(|e| match e {
                Expr::Var(v) => loops.iter().position(|l| l == v),
                _ => None,
            })
            .collect()
    };
    let Some(first) = accs.first() else { return true };
    let p0 = pattern(first);
    if (0..loops.len()).any(|k| !p0.contains(&Some(k))) {
        return false;
    }
    accs.iter().all(|a| {
        let p = pattern(a);
        p == p0 && a.index.iter().zip(&p).all(|(e, k)| k.is_some() || fixed(e))
    })
}

/// Fuse `b` into `a` when both run the same iteration space with the same
/// distribution and no iteration of the fused loop can observe another
/// iteration's effects.
pub fn try_fuse(a: &Parfor, b: &Parfor, env: &DistEnv) -> Option<Parfor> {
    if env.parfor(a.id) != env.parfor(b.id) || a.loops.len() != b.loops.len() {
        return None;
    }
    let loop_vars: Vec<Var> = a.loops.iter().map(|l| l.var.clone()).collect();
    let rename: BTreeMap<Var, Var> = b
        .loops
        .iter()
        .zip(&a.loops)
        .filter(|(x, y)| x.var != y.var)
        .map(|(x, y)| (x.var.clone(), y.var.clone()))
        .collect();
    let b_names = names(&b.body);
    if loop_vars.iter().any(|v| b_names.contains(v) && !b.loops.iter().any(|l| &l.var == v)) {
        return None;
    }
    let mut b = b.clone();
    rename_in_stmts(&mut b.body, &rename);
    for l in &mut b.loops {
        rename_in_expr(&mut l.lo, &rename);
        rename_in_expr(&mut l.hi, &rename);
        if let Some(n) = rename.get(&l.var) {
            l.var = n.clone();
        }
    }
    if a.loops.iter().zip(&b.loops).any(|(x, y)| x.lo != y.lo || x.hi != y.hi) {
        return None;
    }

    let (na, nb) = (names(&a.body), names(&b.body));
    let ra: BTreeSet<&str> = a.reductions.iter().map(|r| r.var.as_str()).collect();
    let rb: BTreeSet<&str> = b.reductions.iter().map(|r| r.var.as_str()).collect();
    if !ra.is_disjoint(&rb) || ra.iter().any(|v| nb.contains(*v)) || rb.iter().any(|v| na.contains(*v)) {
        return None;
    }

    let (ea, eb) = (block_effects(&a.body), block_effects(&b.body));
    let is_loop = |v: &Var| loop_vars.contains(v);
    let scalar_writes =
        |e: &Effects| -> BTreeSet<Var> { e.writes().filter(|v| !env.is_array(v) && !is_loop(v)).cloned().collect() };
    let exposed = |e: &Effects| -> BTreeSet<Var> {
        e.reads.iter().filter(|v| !env.is_array(v) && !is_loop(v)).cloned().collect()
    };
    let (wa, wb) = (scalar_writes(&ea), scalar_writes(&eb));
    if !wa.is_disjoint(&exposed(&eb)) || !wb.is_disjoint(&exposed(&ea)) {
        return None;
    }

    let body_locals: BTreeSet<Var> = wa.union(&wb).cloned().collect();
    let mut fixed_vars: BTreeSet<Var> = BTreeSet::new();
    let mut array_writes: BTreeSet<Var> = BTreeSet::new();
    for body in [&a.body, &b.body] {
        for_each_stmt(body, &mut |s| {
            if let StmtKind::For { var, lo, hi, .. } = &s.kind {
                let outer = |e: &Expr| expr_vars(e).iter().all(|v| !body_locals.contains(v) && !is_loop(v));
                if outer(lo) && outer(hi) {
                    fixed_vars.insert(var.clone());
                }
            }
        });
        array_writes.extend(array_accesses(body).into_iter().filter(|x| x.write).map(|x| x.array));
    }
    let fixed = |e: &Expr| {
        expr_vars(e)
            .iter()
            .all(|v| fixed_vars.contains(v) || (!body_locals.contains(v) && !is_loop(v) && !array_writes.contains(v)))
    };
    let (xa, xb) = (array_accesses(&a.body), array_accesses(&b.body));
    let wa_arr: BTreeSet<&str> = xa.iter().filter(|x| x.write).map(|x| x.array.as_str()).collect();
    let wb_arr: BTreeSet<&str> = xb.iter().filter(|x| x.write).map(|x| x.array.as_str()).collect();
    let shared = wa_arr.iter().filter(|v| nb.contains(**v)).chain(wb_arr.iter().filter(|v| na.contains(**v)));
    for arr in shared {
        let accs: Vec<&Access> = xa.iter().chain(&xb).filter(|x| x.array == *arr).collect();
        // Whole-array uses (calls, copies) in either body cannot be checked.
        let mentioned_only_by_access = [(&xa, &a.body), (&xb, &b.body)]
            .iter()
            .all(|(xs, body)| !names(body).contains(*arr) || xs.iter().any(|x| x.array == *arr));
        if !mentioned_only_by_access || !aligned(&accs, &loop_vars, &fixed) {
            return None;
        }
    }

    let mut fused = a.clone();
    fused.reductions.extend(b.reductions);
    fused.body.extend(b.body);
    Some(fused)
}

fn movable_alloc(s: &Stmt, p: &Parfor) -> bool {
    let StmtKind::Alloc { array, dims } = &s.kind else { return false };
    let touched = names(&p.body);
    !touched.contains(array)
        && !p.reductions.iter().any(|r| &r.var == array)
        && dims.iter().all(|d| match d {
            Extent::Sym(v) => !p.reductions.iter().any(|r| &r.var == v),
            Extent::Const(_) => true,
        })
}

/// Fuse runs of compatible parfors in one block. Allocations between two
/// parfors are hoisted above the first when that lets them fuse. Loop
/// bodies are handled separately; nothing fuses across a serial loop.
pub fn fuse_block(stmts: &mut Vec<Stmt>, env: &DistEnv, groups: &mut BTreeMap<u32, Vec<u32>>) {
    let mut i = 0;
    while i < stmts.len() {
        let StmtKind::Parfor(a) = &stmts[i].kind else {
            i += 1;
            continue;
        };
        let mut j = i + 1;
        while j < stmts.len() && movable_alloc(&stmts[j], a) {
            j += 1;
        }
        let fused = match stmts.get(j).map(|s| &s.kind) {
            Some(StmtKind::Parfor(b)) => try_fuse(a, b, env).map(|p| (p, b.id)),
            _ => None,
        };
        let Some((p, bid)) = fused else {
            i += 1;
            continue;
        };
        let aid = p.id.0;
        let tail = groups.remove(&bid.0).unwrap_or_else(|| vec![bid.0]);
        groups.entry(aid).or_insert_with(|| vec![aid]).extend(tail);
        stmts.remove(j);
        let allocs: Vec<Stmt> = stmts.drain(i + 1..j).collect();
        stmts[i].kind = StmtKind::Parfor(Box::new(p));
        let n = allocs.len();
        stmts.splice(i..i, allocs);
        i += n;
    }
    for s in stmts.iter_mut() {
        if let StmtKind::For { body, .. } = &mut s.kind {
            fuse_block(body, env, groups);
        }
    }
}

// ---------------------------------------------------------------------------
// Intermediate arrays

fn used_outside(stmts: &[Stmt], a: &str, pid: ParforId) -> bool {
    stmts.iter().any(|s| match &s.kind {
        StmtKind::Parfor(p) if p.id == pid => false,
        StmtKind::Alloc { array, .. } if array == a => false,
        StmtKind::For { lo, hi, body, .. } => {
            expr_vars(lo).contains(a) || expr_vars(hi).contains(a) || used_outside(body, a, pid)
        }
        StmtKind::Parfor(p) => {
            p.reductions.iter().any(|r| r.var == a)
                || p.loops.iter().any(|l| expr_vars(&l.lo).contains(a) || expr_vars(&l.hi).contains(a))
                || used_outside(&p.body, a, pid)
        }
        _ => {
            let e = effects(s);
            e.reads.contains(a) || e.defs.contains(a) || e.updates.contains(a)
        }
    })
}

fn find_intermediate(f: &FunctionIR) -> Option<(ParforId, Var, usize)> {
    let params: BTreeSet<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
    for p in f.parfors() {
        let idx: Vec<Expr> = p.loops.iter().map(|l| Expr::var(l.var.clone())).collect();
        for (k, s) in p.body.iter().enumerate() {
            let StmtKind::ArrayWrite { array, index, value } = &s.kind else { continue };
            if index != &idx
                || expr_vars(value).contains(array)
                || params.contains(array.as_str())
                || !f.is_array(array)
                || p.reductions.iter().any(|r| &r.var == array)
                || mentions_name(&p.body[..k], array)
            {
                continue;
            }
            let accs: Vec<Access> = array_accesses(&p.body).into_iter().filter(|a| &a.array == array).collect();
            let single_write = accs.iter().filter(|a| a.write).count() == 1;
            let all_here = accs.iter().all(|a| a.index == idx);
            let only_elementwise = p.body[k + 1..].iter().all(|q| {
                !mentions_name(std::slice::from_ref(q), array)
                    || array_accesses(std::slice::from_ref(q)).iter().any(|a| &a.array == array)
            });
            if single_write && all_here && only_elementwise && !used_outside(&f.body, array, p.id) {
                return Some((p.id, array.clone(), k));
            }
        }
    }
    None
}

fn remove_allocs(stmts: &mut Vec<Stmt>, a: &str) {
    stmts.retain(|s| !matches!(&s.kind, StmtKind::Alloc { array, .. } if array == a));
    for s in stmts.iter_mut() {
        if let StmtKind::For { body, .. } = &mut s.kind {
            remove_allocs(body, a);
        }
    }
}

/// Replace arrays that live entirely inside one parfor iteration (written
/// once at the loop index, read only at that index, unused elsewhere) by
/// body-local scalars. Returns the eliminated arrays.
pub fn eliminate_intermediates(f: &mut FunctionIR) -> Vec<Var> {
    let mut gone = Vec::new();
    while let Some((pid, arr, k)) = find_intermediate(f) {
        let elem = f.array_type(&arr).map(|t| t.elem).unwrap_or(ScalarKind::F64);
        let s = f.fresh(&arr);
        f.symbols.insert(s.clone(), Type::Scalar(elem));
        remove_allocs(&mut f.body, &arr);
        for_each_stmt_mut(&mut f.body, &mut |st| {
            let StmtKind::Parfor(p) = &mut st.kind else { return };
            if p.id != pid {
                return;
            }
            let w = &mut p.body[k];
            if let StmtKind::ArrayWrite { value, .. } = &w.kind {
                w.kind = StmtKind::Assign { lhs: s.clone(), rhs: value.clone() };
            }
            for_each_stmt_mut(&mut p.body, &mut |q| {
                for e in stmt_exprs_mut(q) {
                    rewrite_expr(e, &mut |x| {
                        if matches!(x, Expr::Read { array, .. } if *array == arr) {
                            *x = Expr::var(s.clone());
                        }
                    });
                }
            });
        });
        gone.push(arr);
    }
    for a in &gone {
        f.symbols.remove(a);
    }
    gone
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::analyze;
    use crate::datagen::{generate, Generator};
    use crate::ir::text::parse_function;
    use crate::pipeline::{lower_source, optimize_source};
    use crate::runtime::{run_sequential, RunConfig, Value};

    fn parfor_count(stmts: &[Stmt]) -> usize {
        stmts.iter().filter(|s| matches!(s.kind, StmtKind::Parfor(_))).count()
    }

    #[test]
    fn map_chain_fuses_and_drops_intermediates() {
        let src = "entry function f(n)\n    a = rand(n)\n    b = 2*a\n    c = b + 1\n    return c\nend\n";
        let o = optimize_source(src).unwrap();
        assert_eq!(parfor_count(&o.func.body), 1);
        assert_eq!(o.report.fused_groups, vec![vec![1, 2, 3]]);
        assert_eq!(o.report.eliminated, vec!["a".to_string(), "b".to_string()]);
        assert!(!o.func.is_array("a") && !o.func.is_array("b"));
        let cfg = RunConfig::default().arg("n", Value::Scalar(7.0));
        let x = run_sequential(&o.lowered, &cfg).unwrap();
        let y = run_sequential(&o.func, &cfg).unwrap();
        assert!(crate::runtime::bit_identical(&x, &y));
    }

    #[test]
    fn different_bounds_do_not_fuse() {
        let src = "entry function f(n, m)\n    a = rand(n)\n    b = rand(m)\n    return a, b\nend\n";
        let o = optimize_source(src).unwrap();
        assert_eq!(parfor_count(&o.func.body), 2);
        assert!(o.report.fused_groups.is_empty());
    }

    const SHIFTED: &str = r#"(function t
  (params (n i64))
  (symbols (n i64) (a (f64 n)) (b (f64 n)) (i i64) (j i64))
  (body
    (alloc @1:1 a (n))
    (parfor @1:1 :map 1 map (loops (i 1 n)) (reductions)
      (write @1:1 a (i) (rand 1 (i) (n))))
    (alloc @2:1 b (n))
    (parfor @2:1 :map 2 map (loops (j 1 n)) (reductions)
      (write @2:1 b (j) (read a (+ j 1))))
    (return @3:1 b)))"#;

    #[test]
    fn shifted_read_blocks_fusion() {
        let mut f = parse_function(SHIFTED).unwrap();
        let env = analyze(&f).unwrap();
        assert_eq!(env.parfor(ParforId(1)), env.parfor(ParforId(2)));
        let mut groups = BTreeMap::new();
        fuse_block(&mut f.body, &env, &mut groups);
        assert_eq!(parfor_count(&f.body), 2);

        let aligned = SHIFTED.replace("(read a (+ j 1))", "(read a j)");
        let mut f = parse_function(&aligned).unwrap();
        let env = analyze(&f).unwrap();
        fuse_block(&mut f.body, &env, &mut groups);
        assert_eq!(parfor_count(&f.body), 1);
    }

    #[test]
    fn replicated_product_is_untouched() {
        let src = "entry function g(n)\n    a = rand(n, n)\n    b = rand(n, n)\n    c = a*b\n    return c\nend\n";
        let o = optimize_source(src).unwrap();
        let mut gemms = 0;
        for_each_stmt(&o.func.body, &mut |s| gemms += matches!(s.kind, StmtKind::Gemm { .. }) as usize);
        assert_eq!(gemms, 1);
        assert!(o.report.heuristics_fired.is_empty());
    }

    #[test]
    fn rep_parfor_without_sweep_is_unchanged() {
        let f = lower_source("entry function g(n)\n    a = [i*2.0 for i in 1:n]\n    return a\nend\n").unwrap();
        let env = analyze(&f).unwrap();
        let mut g = f.clone();
        let (_, report) = optimize(&mut g, &env).unwrap();
        assert!(report.heuristics_fired.is_empty() && report.skipped.is_empty());
        assert_eq!(f.body, g.body);
    }

    const SWEEP: &str = r#"(function t
  (params (file str))
  (symbols (file str) (N i64) (M i64) (x (f64 N)) (e (f64 M)) (out (f64 M)) (sq (f64 M)) (k i64) (t i64) (acc f64))
  (body
    (size-query @1:1 (N) "points" file)
    (alloc @1:1 x (N))
    (data-source @1:1 x "points" file)
    (size-query @2:1 (M) "eval" file)
    (alloc @2:1 e (M))
    (data-source @2:1 e "eval" file)
    (alloc @3:1 sq (M))
    (alloc @3:1 out (M))
    (parfor @3:1 :cartesian-map 1 cartesian-map (loops (k 1 M)) (reductions)
      (write @3:1 sq (k) (* (read e k) (read e k)))
      (assign @3:1 acc 0.0)
      (for @3:1 t 1 N
        (assign @3:1 acc (+ acc (* (read x t) (read e k)))))
      (write @3:1 out (k) acc))
    (return @4:1 out sq)))"#;

    #[test]
    fn fission_and_interchange_of_an_independent_sweep() {
        let f = parse_function(SWEEP).unwrap();
        let env = analyze(&f).unwrap();
        assert!(env.parfor(ParforId(1)).is_rep());
        assert!(env.array("x").is_1d());
        let mut g = f.clone();
        let (env2, report) = optimize(&mut g, &env).unwrap();
        assert_eq!(report.heuristics_fired.len(), 1);
        let parfors: Vec<&Parfor> = g.parfors();
        assert_eq!(parfors.len(), 2);
        let swept: Vec<_> = parfors.iter().filter(|p| env2.parfor(p.id).is_1d()).collect();
        assert_eq!(swept.len(), 1);
        assert_eq!(swept[0].loops[0].hi, Expr::var("N"));

        let d = tempfile::tempdir().unwrap();
        generate(d.path(), Generator::Density { n: 9, m: 4 }, 5).unwrap();
        let cfg = RunConfig::default().arg("file", Value::Str(d.path().to_string_lossy().into()));
        let a = run_sequential(&f, &cfg).unwrap();
        let b = run_sequential(&g, &cfg).unwrap();
        assert!(crate::runtime::bit_identical(&a, &b));
        // out[k] = e[k] * sum(x), summed in sample order.
        let (_, xs) = crate::runtime::datafile::read_all(&d.path().join("points.dat")).unwrap();
        let (_, es) = crate::runtime::datafile::read_all(&d.path().join("eval.dat")).unwrap();
        let (_, out) = b.get("out").unwrap().as_array().unwrap();
        for (k, ek) in es.iter().enumerate() {
            let mut acc = 0.0;
            for x in &xs {
                acc += x * ek;
            }
            assert_eq!(out[k], acc);
        }
    }

    #[test]
    fn sweep_reading_replicated_updates_is_refused() {
        let src = SWEEP.replace("(* (read x t) (read e k))", "(* (read x t) (read sq k))");
        let f = parse_function(&src).unwrap();
        let env = analyze(&f).unwrap();
        let mut g = f.clone();
        let (_, report) = optimize(&mut g, &env).unwrap();
        assert!(report.heuristics_fired.is_empty());
        assert_eq!(report.skipped.len(), 1);
        assert!(report.skipped[0].2.contains("`sq`"), "{}", report.skipped[0].2);
        let err = interchange_rep_parfor(&mut f.clone(), f.parfors()[0], Span::new(3, 1), &env, &mut 9).unwrap_err();
        assert_eq!(err.kind, ErrorKind::InterchangeUnsafe);
    }
}
