//! Pattern tagging and lowering of whole-array operations to parfors.

use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{for_each_stmt, for_each_stmt_mut};
use crate::ir::*;

/// Attach a [`PatternTag`] to every array operation, GEMM and serial loop.
pub fn tag_patterns(f: &mut FunctionIR) {
    for_each_stmt_mut(&mut f.body, &mut |s| {
        s.tag = match &s.kind {
            StmtKind::ArrayOp { op: ArrayOp::Map { .. }, .. } => Some(PatternTag::Map),
            StmtKind::ArrayOp { op: ArrayOp::Reduce { .. }, .. } => Some(PatternTag::Reduce),
            StmtKind::ArrayOp { op: ArrayOp::Comprehension { .. }, .. } => Some(PatternTag::CartesianMap),
            StmtKind::Gemm { .. } => Some(PatternTag::Gemm),
            StmtKind::For { .. } => Some(PatternTag::Serial),
            _ => s.tag,
        };
    });
}

/// Number of statements carrying a data-parallel tag (map, reduce,
/// cartesian map).
pub fn parallel_tag_count(f: &FunctionIR) -> usize {
    let mut n = 0;
    for_each_stmt(&f.body, &mut |s| {
        if matches!(s.tag, Some(PatternTag::Map | PatternTag::Reduce | PatternTag::CartesianMap))
            && matches!(s.kind, StmtKind::ArrayOp { .. })
        {
            n += 1;
        }
    });
    n
}

/// Replace every tagged array operation with an equivalent [`Parfor`].
/// GEMMs are left for the optimizer.
pub fn lower_to_parfors(f: &mut FunctionIR) -> Result<()> {
    let mut next = f.next_parfor_id();
    let mut body = std::mem::take(&mut f.body);
    let r = lower_block(f, &mut body, &mut next);
    f.body = body;
    r
}

fn lower_block(f: &mut FunctionIR, stmts: &mut [Stmt], next: &mut u32) -> Result<()> {
    for s in stmts.iter_mut() {
        if let StmtKind::For { body, .. } = &mut s.kind {
            lower_block(f, body, next)?;
            continue;
        }
        let StmtKind::ArrayOp { lhs, op } = &s.kind else { continue };
        let tag = s.tag.ok_or_else(|| Error::at(ErrorKind::Lowering, s.span, "untagged array operation"))?;
        let p = lower_op(f, lhs, op, tag, s.span, ParforId(*next))?;
        *next += 1;
        s.kind = StmtKind::Parfor(Box::new(p));
    }
    Ok(())
}

fn index_loops(f: &mut FunctionIR, dims: &[Extent]) -> (Vec<LoopNest>, Vec<Expr>) {
    let mut loops = Vec::new();
    let mut idx = Vec::new();
    for d in dims {
        let v = f.fresh("i");
        f.symbols.insert(v.clone(), Type::Scalar(ScalarKind::I64));
        loops.push(LoopNest { var: v.clone(), lo: Expr::i64(1), hi: d.to_expr() });
        idx.push(Expr::Var(v));
    }
    (loops, idx)
}

fn operand(o: &Operand, idx: &[Expr]) -> Expr {
    match o {
        Operand::Array(a) => Expr::read(a.clone(), idx.to_vec()),
        Operand::Scalar(e) => e.clone(),
    }
}

fn lower_op(f: &mut FunctionIR, lhs: &Var, op: &ArrayOp, tag: PatternTag, span: Span, id: ParforId) -> Result<Parfor> {
    let shape_of = |f: &FunctionIR, v: &Var| {
        f.array_type(v)
            .map(|t| t.dims.clone())
            .ok_or_else(|| Error::at(ErrorKind::Lowering, span, format!("shape of `{v}` is unknown")))
    };
    match op {
        ArrayOp::Map { op, args } => {
            let dims = shape_of(f, lhs)?;
            let (loops, idx) = index_loops(f, &dims);
            let value = match op {
                MapOp::Bin(b) => Expr::bin(*b, operand(&args[0], &idx), operand(&args[1], &idx)),
                MapOp::Un(u) => Expr::un(*u, operand(&args[0], &idx)),
                MapOp::Fill(v) => Expr::f64(*v),
                MapOp::Rand { stream } => Expr::RandAt { stream: *stream, index: idx.clone(), dims: dims.clone() },
            };
            let body = vec![Stmt::new(StmtKind::ArrayWrite { array: lhs.clone(), index: idx, value }, span)];
            Ok(Parfor { id, loops, reductions: vec![], body, origin: tag })
        }
        ArrayOp::Reduce { op, arg } => {
            let dims = shape_of(f, arg)?;
            let (loops, idx) = index_loops(f, &dims);
            let body = vec![Stmt::new(
                StmtKind::ReduceUpdate {
                    target: lhs.clone(),
                    index: vec![],
                    op: *op,
                    value: Expr::read(arg.clone(), idx),
                },
                span,
            )];
            Ok(Parfor { id, loops, reductions: vec![Reduction { var: lhs.clone(), op: *op }], body, origin: tag })
        }
        ArrayOp::Comprehension { loops, body } => {
            Ok(Parfor { id, loops: loops.clone(), reductions: vec![], body: body.clone(), origin: tag })
        }
    }
}
