//! Slot resolution: IR names become indices into per-kind value vectors.

use std::collections::BTreeMap;

use crate::error::{Error, ErrorKind, Result};
use crate::ir::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Scalar(usize),
    Array(usize),
    Str(usize),
}

#[derive(Clone, Debug)]
pub enum CExpr {
    Const(f64),
    Scalar(usize),
    Read { arr: usize, idx: Vec<CExpr> },
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Un(UnOp, Box<CExpr>),
    Select(Box<CExpr>, Box<CExpr>, Box<CExpr>),
    RandAt { stream: u32, idx: Vec<CExpr>, dims: Vec<CExpr> },
}

#[derive(Clone, Debug)]
pub enum CStr {
    Lit(String),
    Var(usize),
}

#[derive(Clone, Debug)]
pub enum COperand {
    Array(usize),
    Scalar(CExpr),
}

#[derive(Clone, Debug)]
pub enum CArg {
    Scalar(CExpr),
    Array(usize),
    Str(CStr),
}

#[derive(Clone, Debug)]
pub struct CLoop {
    pub var: usize,
    pub lo: CExpr,
    pub hi: CExpr,
}

#[derive(Clone, Debug)]
pub struct CStmt {
    pub id: u32,
    pub span: Span,
    pub kind: CKind,
}

#[derive(Clone, Debug)]
pub enum CKind {
    SetScalar {
        dst: usize,
        e: CExpr,
    },
    SetStr {
        dst: usize,
        e: CStr,
    },
    CopyArray {
        dst: usize,
        src: usize,
    },
    Map {
        lhs: usize,
        op: MapOp,
        args: Vec<COperand>,
    },
    Reduce {
        lhs: usize,
        op: ReduceOp,
        arg: usize,
    },
    /// Parfors and comprehensions; reduction targets are reset to the
    /// identity on entry.
    Loops {
        loops: Vec<CLoop>,
        reductions: Vec<(Slot, ReduceOp)>,
        body: Vec<CStmt>,
    },
    Write {
        arr: usize,
        idx: Vec<CExpr>,
        val: CExpr,
    },
    ReduceScalar {
        dst: usize,
        op: ReduceOp,
        val: CExpr,
    },
    ReduceElem {
        arr: usize,
        idx: Vec<CExpr>,
        op: ReduceOp,
        val: CExpr,
    },
    Gemm {
        out: usize,
        x: usize,
        xt: bool,
        y: usize,
        yt: bool,
    },
    Alloc {
        arr: usize,
        dims: Vec<CExpr>,
    },
    SizeQuery {
        outs: Vec<usize>,
        dataset: String,
        file: CStr,
    },
    DataSource {
        arr: usize,
        dataset: String,
        file: CStr,
    },
    DataSink {
        arr: usize,
        dataset: String,
        file: CStr,
        elem: ScalarKind,
    },
    BlockRead {
        arr: usize,
        dataset: String,
        file: CStr,
        start: usize,
        size: usize,
    },
    BlockWrite {
        arr: usize,
        dataset: String,
        file: CStr,
        start: usize,
        size: usize,
        elem: ScalarKind,
    },
    Call {
        result: Option<Slot>,
        name: String,
        args: Vec<CArg>,
        known: bool,
    },
    /// Resumable loops hand control back to the world at the start of
    /// every iteration; the rest run to completion in one step.
    For {
        var: usize,
        lo: CExpr,
        hi: CExpr,
        body: Vec<CStmt>,
        resumable: bool,
    },
    Return {
        vars: Vec<(String, Slot)>,
    },
    Nop,
    Checkpoint {
        vars: Vec<(String, Slot)>,
        index: usize,
    },
    CheckpointCleanup,
    CheckpointRestore {
        vars: Vec<(String, Slot)>,
        start: usize,
        default: CExpr,
    },
    Partition {
        total: CExpr,
        start: usize,
        size: usize,
    },
    Allreduce {
        slot: Slot,
        op: ReduceOp,
    },
    Bcast {
        slot: Slot,
        root: u32,
    },
    OnRoot(Box<CStmt>),
}

/// A function ready to execute.
#[derive(Clone, Debug)]
pub struct Program {
    pub name: String,
    pub scalars: Vec<Var>,
    pub arrays: Vec<Var>,
    pub strs: Vec<Var>,
    pub params: Vec<(Var, Slot)>,
    pub body: Vec<CStmt>,
    pub slots: BTreeMap<Var, Slot>,
    /// Scalars private to parallel loop bodies; they may legitimately
    /// differ between ranks.
    pub private: Vec<usize>,
}

impl Program {
    pub fn slot(&self, v: &str) -> Option<Slot> {
        self.slots.get(v).copied()
    }
}

struct Compiler<'a> {
    f: &'a FunctionIR,
    slots: BTreeMap<Var, Slot>,
    next_id: u32,
    in_loops: usize,
    for_depth: usize,
    private: std::collections::BTreeSet<usize>,
}

impl CKind {
    pub fn is_collective(&self) -> bool {
        matches!(
            self,
            CKind::Allreduce { .. }
                | CKind::Bcast { .. }
                | CKind::BlockWrite { .. }
                | CKind::Checkpoint { .. }
                | CKind::CheckpointCleanup
                | CKind::CheckpointRestore { .. }
        )
    }
}

fn has_collective(body: &[CStmt]) -> bool {
    body.iter().any(|s| match &s.kind {
        CKind::For { body, .. } => has_collective(body),
        k => k.is_collective(),
    })
}

fn err(span: Span, msg: impl Into<String>) -> Error {
    Error::at(ErrorKind::Internal, span, msg)
}

pub fn compile(f: &FunctionIR) -> Result<Program> {
    let mut scalars = Vec::new();
    let mut arrays = Vec::new();
    let mut strs = Vec::new();
    let mut slots = BTreeMap::new();
    for (name, ty) in &f.symbols {
        let s = match ty {
            Type::Scalar(_) => {
                scalars.push(name.clone());
                Slot::Scalar(scalars.len() - 1)
            }
            Type::Array(_) => {
                arrays.push(name.clone());
                Slot::Array(arrays.len() - 1)
            }
            Type::Str => {
                strs.push(name.clone());
                Slot::Str(strs.len() - 1)
            }
        };
        slots.insert(name.clone(), s);
    }
    let mut c = Compiler { f, slots, next_id: 0, in_loops: 0, for_depth: 0, private: Default::default() };
    let params =
        f.params.iter().map(|p| Ok((p.name.clone(), c.slot(&p.name, Span::default())?))).collect::<Result<Vec<_>>>()?;
    let body = c.block(&f.body)?;
    let private = c.private.into_iter().collect();
    Ok(Program { name: f.name.clone(), scalars, arrays, strs, params, body, slots: c.slots, private })
}

impl Compiler<'_> {
    fn slot(&self, v: &str, span: Span) -> Result<Slot> {
        self.slots.get(v).copied().ok_or_else(|| err(span, format!("unknown variable `{v}`")))
    }

    fn scalar(&self, v: &str, span: Span) -> Result<usize> {
        match self.slot(v, span)? {
            Slot::Scalar(i) => Ok(i),
            _ => Err(err(span, format!("`{v}` is not a scalar"))),
        }
    }

    fn array(&self, v: &str, span: Span) -> Result<usize> {
        match self.slot(v, span)? {
            Slot::Array(i) => Ok(i),
            _ => Err(err(span, format!("`{v}` is not an array"))),
        }
    }

    fn elem(&self, v: &str) -> ScalarKind {
        self.f.array_type(v).map(|t| t.elem).unwrap_or(ScalarKind::F64)
    }

    fn expr(&self, e: &Expr, span: Span) -> Result<CExpr> {
        Ok(match e {
            Expr::Lit(Lit::F64(v)) => CExpr::Const(*v),
            Expr::Lit(Lit::I64(v)) => CExpr::Const(*v as f64),
            Expr::Lit(Lit::Bool(b)) => CExpr::Const(if *b { 1.0 } else { 0.0 }),
            Expr::Lit(Lit::Str(_)) => return Err(err(span, "string in numeric context")),
            Expr::Var(v) => CExpr::Scalar(self.scalar(v, span)?),
            Expr::Read { array, index } => CExpr::Read {
                arr: self.array(array, span)?,
                idx: index.iter().map(|i| self.expr(i, span)).collect::<Result<_>>()?,
            },
            Expr::Bin(op, a, b) => CExpr::Bin(*op, Box::new(self.expr(a, span)?), Box::new(self.expr(b, span)?)),
            Expr::Un(op, a) => CExpr::Un(*op, Box::new(self.expr(a, span)?)),
            Expr::Select(c, a, b) => CExpr::Select(
                Box::new(self.expr(c, span)?),
                Box::new(self.expr(a, span)?),
                Box::new(self.expr(b, span)?),
            ),
            Expr::RandAt { stream, index, dims } => CExpr::RandAt {
                stream: *stream,
                idx: index.iter().map(|i| self.expr(i, span)).collect::<Result<_>>()?,
                dims: dims.iter().map(|d| self.expr(&d.to_expr(), span)).collect::<Result<_>>()?,
            },
        })
    }

    fn str_expr(&self, e: &Expr, span: Span) -> Result<CStr> {
        match e {
            Expr::Lit(Lit::Str(s)) => Ok(CStr::Lit(s.clone())),
            Expr::Var(v) => match self.slot(v, span)? {
                Slot::Str(i) => Ok(CStr::Var(i)),
                _ => Err(err(span, format!("`{v}` is not a string"))),
            },
            _ => Err(err(span, "expected a string")),
        }
    }

    fn extents(&self, dims: &[Extent], span: Span) -> Result<Vec<CExpr>> {
        dims.iter().map(|d| self.expr(&d.to_expr(), span)).collect()
    }

    fn named(&self, vars: &[Var], span: Span) -> Result<Vec<(String, Slot)>> {
        vars.iter().map(|v| Ok((v.clone(), self.slot(v, span)?))).collect()
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<Vec<CStmt>> {
        stmts.iter().map(|s| self.stmt(s)).collect()
    }

    fn loops(&mut self, loops: &[LoopNest], span: Span) -> Result<Vec<CLoop>> {
        let out = loops
            .iter()
            .map(|l| {
                Ok(CLoop { var: self.scalar(&l.var, span)?, lo: self.expr(&l.lo, span)?, hi: self.expr(&l.hi, span)? })
            })
            .collect::<Result<Vec<_>>>()?;
        self.private.extend(out.iter().map(|l| l.var));
        Ok(out)
    }

    fn loop_body(&mut self, body: &[Stmt]) -> Result<Vec<CStmt>> {
        self.in_loops += 1;
        let r = self.block(body);
        self.in_loops -= 1;
        r
    }

    fn stmt(&mut self, s: &Stmt) -> Result<CStmt> {
        let id = self.next_id;
        self.next_id += 1;
        let sp = s.span;
        let kind = match &s.kind {
            StmtKind::Assign { lhs, rhs } => match self.slot(lhs, sp)? {
                Slot::Scalar(dst) => {
                    if self.in_loops > 0 {
                        self.private.insert(dst);
                    }
                    CKind::SetScalar { dst, e: self.expr(rhs, sp)? }
                }
                Slot::Str(dst) => CKind::SetStr { dst, e: self.str_expr(rhs, sp)? },
                Slot::Array(dst) => {
                    let Expr::Var(src) = rhs else { return Err(err(sp, "array assignment needs an array")) };
                    CKind::CopyArray { dst, src: self.array(src, sp)? }
                }
            },
            StmtKind::ArrayOp { lhs, op } => match op {
                ArrayOp::Map { op, args } => CKind::Map {
                    lhs: self.array(lhs, sp)?,
                    op: op.clone(),
                    args: args
                        .iter()
                        .map(|a| {
                            Ok(match a {
                                Operand::Array(v) => COperand::Array(self.array(v, sp)?),
                                Operand::Scalar(e) => COperand::Scalar(self.expr(e, sp)?),
                            })
                        })
                        .collect::<Result<_>>()?,
                },
                ArrayOp::Reduce { op, arg } => {
                    CKind::Reduce { lhs: self.scalar(lhs, sp)?, op: *op, arg: self.array(arg, sp)? }
                }
                ArrayOp::Comprehension { loops, body } => {
                    CKind::Loops { loops: self.loops(loops, sp)?, reductions: vec![], body: self.loop_body(body)? }
                }
            },
            StmtKind::Parfor(p) => CKind::Loops {
                loops: self.loops(&p.loops, sp)?,
                reductions: p.reductions.iter().map(|r| Ok((self.slot(&r.var, sp)?, r.op))).collect::<Result<_>>()?,
                body: self.loop_body(&p.body)?,
            },
            StmtKind::ArrayWrite { array, index, value } => CKind::Write {
                arr: self.array(array, sp)?,
                idx: index.iter().map(|i| self.expr(i, sp)).collect::<Result<_>>()?,
                val: self.expr(value, sp)?,
            },
            StmtKind::ReduceUpdate { target, index, op, value } => {
                if index.is_empty() {
                    CKind::ReduceScalar { dst: self.scalar(target, sp)?, op: *op, val: self.expr(value, sp)? }
                } else {
                    CKind::ReduceElem {
                        arr: self.array(target, sp)?,
                        idx: index.iter().map(|i| self.expr(i, sp)).collect::<Result<_>>()?,
                        op: *op,
                        val: self.expr(value, sp)?,
                    }
                }
            }
            StmtKind::Gemm { out, x, xt, y, yt } => CKind::Gemm {
                out: self.array(out, sp)?,
                x: self.array(x, sp)?,
                xt: *xt,
                y: self.array(y, sp)?,
                yt: *yt,
            },
            StmtKind::Alloc { array, dims } => {
                CKind::Alloc { arr: self.array(array, sp)?, dims: self.extents(dims, sp)? }
            }
            StmtKind::LocalAlloc { array, dims, local_size } => {
                let mut d = self.extents(&dims[..dims.len() - 1], sp)?;
                d.push(CExpr::Scalar(self.scalar(local_size, sp)?));
                CKind::Alloc { arr: self.array(array, sp)?, dims: d }
            }
            StmtKind::SizeQuery { outs, dataset, file } => CKind::SizeQuery {
                outs: outs.iter().map(|o| self.scalar(o, sp)).collect::<Result<_>>()?,
                dataset: dataset.clone(),
                file: self.str_expr(file, sp)?,
            },
            StmtKind::DataSource { array, dataset, file } => CKind::DataSource {
                arr: self.array(array, sp)?,
                dataset: dataset.clone(),
                file: self.str_expr(file, sp)?,
            },
            StmtKind::DataSink { array, dataset, file } => CKind::DataSink {
                arr: self.array(array, sp)?,
                dataset: dataset.clone(),
                file: self.str_expr(file, sp)?,
                elem: self.elem(array),
            },
            StmtKind::BlockRead { array, dataset, file, start, size } => CKind::BlockRead {
                arr: self.array(array, sp)?,
                dataset: dataset.clone(),
                file: self.str_expr(file, sp)?,
                start: self.scalar(start, sp)?,
                size: self.scalar(size, sp)?,
            },
            StmtKind::BlockWrite { array, dataset, file, start, size } => CKind::BlockWrite {
                arr: self.array(array, sp)?,
                dataset: dataset.clone(),
                file: self.str_expr(file, sp)?,
                start: self.scalar(start, sp)?,
                size: self.scalar(size, sp)?,
                elem: self.elem(array),
            },
            StmtKind::Call { result, name, args, known } => CKind::Call {
                result: match result {
                    Some(r) => Some(self.slot(r, sp)?),
                    None => None,
                },
                name: name.clone(),
                args: args
                    .iter()
                    .map(|a| {
                        Ok(match a {
                            Expr::Var(v) => match self.slot(v, sp)? {
                                Slot::Array(i) => CArg::Array(i),
                                Slot::Str(i) => CArg::Str(CStr::Var(i)),
                                Slot::Scalar(i) => CArg::Scalar(CExpr::Scalar(i)),
                            },
                            Expr::Lit(Lit::Str(s)) => CArg::Str(CStr::Lit(s.clone())),
                            e => CArg::Scalar(self.expr(e, sp)?),
                        })
                    })
                    .collect::<Result<_>>()?,
                known: *known,
            },
            StmtKind::For { var, lo, hi, body } => {
                let var = self.scalar(var, sp)?;
                if self.in_loops > 0 {
                    self.private.insert(var);
                }
                self.for_depth += 1;
                let body = self.block(body);
                self.for_depth -= 1;
                let body = body?;
                let resumable = self.in_loops == 0 && (self.for_depth == 0 || has_collective(&body));
                CKind::For { var, lo: self.expr(lo, sp)?, hi: self.expr(hi, sp)?, body, resumable }
            }
            StmtKind::Return { vars } => CKind::Return { vars: self.named(vars, sp)? },
            StmtKind::Partitioned { .. } => CKind::Nop,
            StmtKind::Checkpoint { vars, index_var } => {
                CKind::Checkpoint { vars: self.named(vars, sp)?, index: self.scalar(index_var, sp)? }
            }
            StmtKind::CheckpointCleanup => CKind::CheckpointCleanup,
            StmtKind::CheckpointRestore { vars, start_var, default_start, .. } => CKind::CheckpointRestore {
                vars: self.named(vars, sp)?,
                start: self.scalar(start_var, sp)?,
                default: self.expr(default_start, sp)?,
            },
            StmtKind::Partition { extent, start, size } => CKind::Partition {
                total: self.expr(&extent.to_expr(), sp)?,
                start: self.scalar(start, sp)?,
                size: self.scalar(size, sp)?,
            },
            StmtKind::Allreduce { var, op } => CKind::Allreduce { slot: self.slot(var, sp)?, op: *op },
            StmtKind::Bcast { var, root } => CKind::Bcast { slot: self.slot(var, sp)?, root: *root },
            StmtKind::OnRoot(inner) => CKind::OnRoot(Box::new(self.stmt(inner)?)),
        };
        if self.in_loops > 0 && kind.is_collective() {
            return Err(err(sp, "collective operation inside a parallel loop body"));
        }
        Ok(CStmt { id, span: sp, kind })
    }
}
