//! Readable per-rank pseudo-source for an SPMD program.

use std::fmt::Write;

use super::SpmdProgram;
use crate::ir::text::f64_text;
use crate::ir::visit::expr_vars;
use crate::ir::*;

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 1,
        BinOp::Add | BinOp::Sub => 2,
        BinOp::Mul | BinOp::Div => 3,
        BinOp::Pow => 4,
        BinOp::Min | BinOp::Max => 5,
    }
}

fn expr(e: &Expr) -> String {
    expr_in(e, 0)
}

fn expr_in(e: &Expr, outer: u8) -> String {
    match e {
        Expr::Lit(Lit::F64(v)) => f64_text(*v),
        Expr::Lit(Lit::I64(v)) => v.to_string(),
        Expr::Lit(Lit::Bool(b)) => b.to_string(),
        Expr::Lit(Lit::Str(s)) => format!("{s:?}"),
        Expr::Var(v) => v.clone(),
        Expr::Read { array, index } => format!("{array}[{}]", list(index)),
        Expr::Bin(op @ (BinOp::Min | BinOp::Max), a, b) => format!("{}({}, {})", op.symbol(), expr(a), expr(b)),
        Expr::Bin(op, a, b) => {
            let p = prec(*op);
            let s = format!("{} {} {}", expr_in(a, p), op.symbol(), expr_in(b, p + 1));
            if p < outer {
                format!("({s})")
            } else {
                s
            }
        }
        Expr::Un(UnOp::Neg, a) => format!("-{}", expr_in(a, 6)),
        Expr::Un(UnOp::Not, a) => format!("!{}", expr_in(a, 6)),
        Expr::Un(op, a) => format!("{}({})", op.name(), expr(a)),
        Expr::Select(c, a, b) => format!("ifelse({}, {}, {})", expr(c), expr(a), expr(b)),
        Expr::RandAt { stream, index, dims } => {
            let dims: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            format!("rand_at({stream}, [{}], ({}))", list(index), dims.join(", "))
        }
    }
}

fn list(es: &[Expr]) -> String {
    es.iter().map(expr).collect::<Vec<_>>().join(", ")
}

fn extents(ds: &[Extent]) -> String {
    ds.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")
}

fn elem_name(f: &FunctionIR, a: &str) -> &'static str {
    match f.array_type(a).map(|t| t.elem) {
        Some(ScalarKind::I64) => "Int64",
        Some(ScalarKind::Bool) => "Bool",
        _ => "Float64",
    }
}

fn op_symbol(op: ReduceOp) -> &'static str {
    match op {
        ReduceOp::Sum => "+",
        ReduceOp::Prod => "*",
        ReduceOp::Min => "min",
        ReduceOp::Max => "max",
    }
}

struct Emitter<'a> {
    p: &'a SpmdProgram,
    out: String,
}

impl Emitter<'_> {
    fn line(&mut self, depth: usize, s: &str) {
        let _ = writeln!(self.out, "{}{s}", "    ".repeat(depth));
    }

    fn block(&mut self, stmts: &[Stmt], depth: usize) {
        for s in stmts {
            self.stmt(s, depth);
        }
    }

    fn stmt(&mut self, s: &Stmt, d: usize) {
        let f = &self.p.func;
        match &s.kind {
            StmtKind::Assign { lhs, rhs } => self.line(d, &format!("{lhs} = {}", expr(rhs))),
            StmtKind::ArrayOp { lhs, .. } => self.line(d, &format!("{lhs} = <array op>")),
            StmtKind::ArrayWrite { array, index, value } => {
                self.line(d, &format!("{array}[{}] = {}", list(index), expr(value)))
            }
            StmtKind::ReduceUpdate { target, index, op, value } => {
                let t = if index.is_empty() { target.clone() } else { format!("{target}[{}]", list(index)) };
                match op {
                    ReduceOp::Sum => self.line(d, &format!("{t} += {}", expr(value))),
                    ReduceOp::Prod => self.line(d, &format!("{t} *= {}", expr(value))),
                    _ => self.line(d, &format!("{t} = {}({t}, {})", op.name(), expr(value))),
                }
            }
            StmtKind::Gemm { out, x, xt, y, yt } => {
                let t = |b: &bool| if *b { "'" } else { "" };
                self.line(d, &format!("{out} = {x}{} * {y}{}", t(xt), t(yt)))
            }
            StmtKind::Alloc { array, dims } => {
                self.line(d, &format!("{array} = zeros({}, {})", elem_name(f, array), extents(dims)))
            }
            StmtKind::LocalAlloc { array, dims, local_size } => {
                let mut ds: Vec<String> = dims[..dims.len() - 1].iter().map(|x| x.to_string()).collect();
                ds.push(local_size.clone());
                self.line(
                    d,
                    &format!(
                        "{array} = zeros({}, {})  # local block of {}",
                        elem_name(f, array),
                        ds.join(", "),
                        extents(dims)
                    ),
                )
            }
            StmtKind::SizeQuery { outs, dataset, file } => {
                self.line(d, &format!("{} = dataset_size({}, {dataset:?})", outs.join(", "), expr(file)))
            }
            StmtKind::DataSource { array, dataset, file } => {
                self.line(d, &format!("read!({array}, {}, {dataset:?})", expr(file)))
            }
            StmtKind::DataSink { array, dataset, file } => {
                self.line(d, &format!("write({array}, {}, {dataset:?})", expr(file)))
            }
            StmtKind::Call { result, name, args, .. } => {
                let call = format!("{name}({})", list(args));
                match result {
                    Some(r) => self.line(d, &format!("{r} = {call}")),
                    None => self.line(d, &call),
                }
            }
            StmtKind::For { var, lo, hi, body } => {
                self.line(d, &format!("for {var} in {}:{}", expr(lo), expr(hi)));
                self.block(body, d + 1);
                self.line(d, "end");
            }
            StmtKind::Parfor(p) => {
                let loops: Vec<String> = p
                    .loops
                    .iter()
                    .rev()
                    .map(|l| format!("{} in {}:{}", l.var, expr_in(&l.lo, 9), expr_in(&l.hi, 9)))
                    .collect();
                let local = |l: &LoopNest| expr_vars(&l.lo).iter().any(|v| self.p.rank_local.contains(v));
                let dist = if p.loops.last().is_some_and(local) { "this rank's block" } else { "replicated" };
                self.line(d, &format!("# {} ({dist})", p.id));
                let mut head = format!("for {}", loops.join(", "));
                if !p.reductions.is_empty() {
                    let r: Vec<String> =
                        p.reductions.iter().map(|r| format!("{}:{}", op_symbol(r.op), r.var)).collect();
                    let _ = write!(head, "  # reduce {}", r.join(" "));
                }
                self.line(d, &head);
                self.block(&p.body, d + 1);
                self.line(d, "end");
            }
            StmtKind::Return { vars } => self.line(d, &format!("return {}", vars.join(", "))),
            StmtKind::Partitioned { array } => self.line(d, &format!("# {array} annotated 2D")),
            StmtKind::Checkpoint { vars, index_var } => {
                self.line(d, &format!("checkpoint_if_due({index_var}, {})  # rank 0 writes", vars.join(", ")))
            }
            StmtKind::CheckpointCleanup => self.line(d, "checkpoint_cleanup()"),
            StmtKind::CheckpointRestore { vars, index_var, start_var, default_start } => self.line(
                d,
                &format!(
                    "{start_var} = restore_checkpoint!({}; index = {index_var}, default = {})",
                    vars.join(", "),
                    expr(default_start)
                ),
            ),
            StmtKind::Partition { extent, start, size } => {
                self.line(d, &format!("{start}, {size} = partition({extent}, nranks(), rank())"))
            }
            StmtKind::BlockRead { array, dataset, file, start, size } => {
                self.line(d, &format!("read_block!({array}, {}, {dataset:?}, {start}+1:{start}+{size})", expr(file)))
            }
            StmtKind::BlockWrite { array, dataset, file, start, size } => {
                self.line(d, &format!("write_block({array}, {}, {dataset:?}, {start}+1:{start}+{size})", expr(file)))
            }
            StmtKind::Allreduce { var, op } => self.line(d, &format!("allreduce!({var}, {})", op_symbol(*op))),
            StmtKind::Bcast { var, root } => self.line(d, &format!("bcast!({var}, root = {root})")),
            StmtKind::OnRoot(inner) => {
                self.line(d, "if rank() == 0");
                self.stmt(inner, d + 1);
                self.line(d, "end");
            }
        }
    }
}

/// The program as every rank sees it, in a Julia-like notation.
pub fn emit_spmd_source(p: &SpmdProgram) -> String {
    let f = &p.func;
    let mut e = Emitter { p, out: String::new() };
    let dist: Vec<&str> = p.distributed.iter().map(String::as_str).collect();
    e.line(0, "# SPMD program: each of nranks() ranks runs this text; rank() is 0-based.");
    e.line(
        0,
        &format!(
            "# block-distributed along the last dimension: {}",
            if dist.is_empty() { "(none)".into() } else { dist.join(", ") }
        ),
    );
    let params: Vec<&str> = f.params.iter().map(|p| p.name.as_str()).collect();
    e.line(0, &format!("function {}({})", f.name, params.join(", ")));
    e.block(&f.body, 1);
    e.line(0, "end");
    e.out
}
