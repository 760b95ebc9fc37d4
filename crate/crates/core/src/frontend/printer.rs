//! Source printer. Output re-parses to the same AST (modulo spans);
//! every compound expression is parenthesized so no precedence
//! reasoning is needed.

use std::fmt::Write as _;

use super::ast::*;
use crate::ir::UnOp;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (name, _) in &p.externs {
        let _ = writeln!(out, "extern {name}");
    }
    let params: Vec<String> = p
        .func
        .params
        .iter()
        .map(|prm| match prm.ty {
            None => prm.name.clone(),
            Some(ParamType::Str) => format!("{}::String", prm.name),
            Some(ParamType::Scalar(k)) => format!("{}::{}", prm.name, scalar_kind_spelling(k)),
        })
        .collect();
    let _ = writeln!(out, "entry function {}({})", p.func.name, params.join(", "));
    print_block(&mut out, &p.func.body, 1);
    out.push_str("end\n");
    out
}

fn print_block(out: &mut String, body: &[Stmt], depth: usize) {
    for s in body {
        print_stmt(out, s, depth);
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    let pad = "    ".repeat(depth);
    match &s.kind {
        StmtKind::Assign { targets, op, value } => {
            let _ = writeln!(out, "{pad}{} {} {}", targets.join(", "), op.symbol(), print_expr(value));
        }
        StmtKind::For { var, lo, hi, body } => {
            let _ = writeln!(out, "{pad}for {var} in {}:{}", print_expr(lo), print_expr(hi));
            print_block(out, body, depth + 1);
            let _ = writeln!(out, "{pad}end");
        }
        StmtKind::Return(vals) => {
            let vs: Vec<String> = vals.iter().map(print_expr).collect();
            if vs.is_empty() {
                let _ = writeln!(out, "{pad}return");
            } else {
                let _ = writeln!(out, "{pad}return {}", vs.join(", "));
            }
        }
        StmtKind::Partitioned(a) => {
            let _ = writeln!(out, "{pad}partitioned({a}, 2D)");
        }
        StmtKind::Expr(e) => {
            let _ = writeln!(out, "{pad}{}", print_expr(e));
        }
    }
}

pub fn print_expr(e: &Expr) -> String {
    match &e.kind {
        ExprKind::Int(v) => v.to_string(),
        ExprKind::Float(v) => format!("{v:?}"),
        ExprKind::Str(s) => {
            let mut o = String::from("\"");
            for c in s.chars() {
                match c {
                    '"' => o.push_str("\\\""),
                    '\\' => o.push_str("\\\\"),
                    '\n' => o.push_str("\\n"),
                    c => o.push(c),
                }
            }
            o.push('"');
            o
        }
        ExprKind::Bool(b) => b.to_string(),
        ExprKind::Ident(s) => s.clone(),
        ExprKind::Binary(sym, a, b) => format!("({} {} {})", print_expr(a), sym.text(), print_expr(b)),
        ExprKind::Unary(op, a) => {
            let s = if *op == UnOp::Not { "!" } else { "-" };
            format!("({s}{})", print_expr(a))
        }
        ExprKind::Transpose(a) => format!("({})'", print_expr(a)),
        ExprKind::Call(name, args) => {
            let a: Vec<String> = args.iter().map(print_expr).collect();
            format!("{name}({})", a.join(", "))
        }
        ExprKind::Index(base, idx) => {
            let b = match base.kind {
                ExprKind::Ident(_) => print_expr(base),
                _ => format!("({})", print_expr(base)),
            };
            let is: Vec<String> = idx
                .iter()
                .map(|i| match i {
                    Index::All => ":".to_string(),
                    Index::Expr(x) => print_expr(x),
                })
                .collect();
            format!("{b}[{}]", is.join(", "))
        }
        ExprKind::Comprehension { elem, body, gens } => {
            let prefix = elem.map(scalar_kind_spelling).unwrap_or("");
            let g: Vec<String> =
                gens.iter().map(|g| format!("{} in {}:{}", g.var, print_expr(&g.lo), print_expr(&g.hi))).collect();
            format!("{prefix}[{} for {}]", print_expr(body), g.join(", "))
        }
        ExprKind::TypeLit(c, k) => {
            let c = match c {
                ContainerKind::Vector => "Vector",
                ContainerKind::Matrix => "Matrix",
            };
            format!("{c}{{{}}}", scalar_kind_spelling(*k))
        }
    }
}
