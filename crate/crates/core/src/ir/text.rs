//! Textual IR: one statement per line, s-expression style.
//!
//! ```text
//! (function NAME
//!   (params (NAME TYPE)...)
//!   (symbols (NAME TYPE)...)
//!   (body
//!     STMT...))
//! ```
//!
//! Every statement is a list whose head names the statement kind,
//! followed by a span atom `@LINE:COL`, an optional pattern tag atom
//! (`:map`, `:reduce`, `:cartesian-map`, `:gemm`, `:serial`) and the
//! operands. Nested bodies continue on following lines, indented. Types
//! are `f64`, `i64`, `bool`, `str` or `(ELEM DIM...)` for arrays.
//! Expressions are prefix lists: `(+ a b)`, `(neg a)`, `(read A i j)`,
//! `(select c a b)`, `(rand STREAM (IDX...) (DIMS...))`. Float literals
//! always carry a `.` or exponent; non-finite values are written `+inf`,
//! `-inf` and `+nan`. Lines starting with `;` are comments.
//!
//! The full statement grammar is listed in `docs/ir-format.md`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use super::*;

#[derive(Debug, Error, PartialEq)]
#[error("IR text error: {0}")]
pub struct ParseError(pub String);

type PResult<T> = Result<T, ParseError>;

fn perr<T>(msg: impl Into<String>) -> PResult<T> {
    Err(ParseError(msg.into()))
}

// ---------------------------------------------------------------- printing

pub fn print_function(f: &FunctionIR) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "(function {}", f.name);
    out.push_str("  (params");
    for p in &f.params {
        let _ = write!(out, " ({} {})", p.name, type_text(&p.ty));
    }
    out.push_str(")\n  (symbols");
    for (name, ty) in &f.symbols {
        let _ = write!(out, "\n    ({} {})", name, type_text(ty));
    }
    out.push_str(")\n  (body");
    for s in &f.body {
        out.push('\n');
        print_stmt(&mut out, s, 2);
    }
    out.push_str("))\n");
    out
}

pub fn print_stmts(stmts: &[Stmt]) -> String {
    let mut out = String::new();
    for s in stmts {
        print_stmt(&mut out, s, 0);
        out.push('\n');
    }
    out
}

fn type_text(t: &Type) -> String {
    match t {
        Type::Scalar(k) => k.name().to_string(),
        Type::Str => "str".to_string(),
        Type::Array(a) => {
            let mut s = format!("({}", a.elem.name());
            for d in &a.dims {
                let _ = write!(s, " {d}");
            }
            s.push(')');
            s
        }
    }
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn head(out: &mut String, depth: usize, name: &str, s: &Stmt) {
    indent(out, depth);
    let _ = write!(out, "({name} @{}:{}", s.span.line, s.span.col);
    if let Some(t) = s.tag {
        let _ = write!(out, " :{}", t.name());
    }
}

fn print_block(out: &mut String, body: &[Stmt], depth: usize) {
    for s in body {
        out.push('\n');
        print_stmt(out, s, depth);
    }
}

fn print_stmt(out: &mut String, s: &Stmt, depth: usize) {
    match &s.kind {
        StmtKind::Assign { lhs, rhs } => {
            head(out, depth, "assign", s);
            let _ = write!(out, " {lhs} {}", expr_text(rhs));
        }
        StmtKind::ArrayOp { lhs, op } => match op {
            ArrayOp::Map { op, args } => {
                head(out, depth, "map", s);
                let opt = match op {
                    MapOp::Bin(b) => format!("(bin {})", b.symbol()),
                    MapOp::Un(u) => format!("(un {})", u.name()),
                    MapOp::Rand { stream } => format!("(rand {stream})"),
                    MapOp::Fill(v) => format!("(fill {})", f64_text(*v)),
                };
                let _ = write!(out, " {lhs} {opt}");
                for a in args {
                    match a {
                        Operand::Array(v) => {
                            let _ = write!(out, " (array {v})");
                        }
                        Operand::Scalar(e) => {
                            let _ = write!(out, " (scalar {})", expr_text(e));
                        }
                    }
                }
            }
            ArrayOp::Reduce { op, arg } => {
                head(out, depth, "reduce", s);
                let _ = write!(out, " {lhs} {} {arg}", op.name());
            }
            ArrayOp::Comprehension { loops, body } => {
                head(out, depth, "comprehension", s);
                let _ = write!(out, " {lhs} {}", loops_text(loops));
                print_block(out, body, depth + 1);
            }
        },
        StmtKind::ArrayWrite { array, index, value } => {
            head(out, depth, "write", s);
            let _ = write!(out, " {array} {} {}", list_text(index), expr_text(value));
        }
        StmtKind::ReduceUpdate { target, index, op, value } => {
            head(out, depth, "reduce-update", s);
            let _ = write!(out, " {target} {} {} {}", list_text(index), op.name(), expr_text(value));
        }
        StmtKind::Gemm { out: o, x, xt, y, yt } => {
            head(out, depth, "gemm", s);
            let _ = write!(out, " {o} {x} {xt} {y} {yt}");
        }
        StmtKind::Alloc { array, dims } => {
            head(out, depth, "alloc", s);
            let _ = write!(out, " {array} {}", dims_text(dims));
        }
        StmtKind::LocalAlloc { array, dims, local_size } => {
            head(out, depth, "local-alloc", s);
            let _ = write!(out, " {array} {} {local_size}", dims_text(dims));
        }
        StmtKind::SizeQuery { outs, dataset, file } => {
            head(out, depth, "size-query", s);
            let _ = write!(out, " ({}) {} {}", outs.join(" "), quote(dataset), expr_text(file));
        }
        StmtKind::DataSource { array, dataset, file } => {
            head(out, depth, "data-source", s);
            let _ = write!(out, " {array} {} {}", quote(dataset), expr_text(file));
        }
        StmtKind::DataSink { array, dataset, file } => {
            head(out, depth, "data-sink", s);
            let _ = write!(out, " {array} {} {}", quote(dataset), expr_text(file));
        }
        StmtKind::Call { result, name, args, known } => {
            head(out, depth, "call", s);
            let r = result.as_deref().unwrap_or("-");
            let k = if *known { "known" } else { "unknown" };
            let _ = write!(out, " {r} {name} {k}");
            for a in args {
                let _ = write!(out, " {}", expr_text(a));
            }
        }
        StmtKind::For { var, lo, hi, body } => {
            head(out, depth, "for", s);
            let _ = write!(out, " {var} {} {}", expr_text(lo), expr_text(hi));
            print_block(out, body, depth + 1);
        }
        StmtKind::Parfor(p) => {
            head(out, depth, "parfor", s);
            let _ = write!(out, " {} {} {} (reductions", p.id.0, p.origin.name(), loops_text(&p.loops));
            for r in &p.reductions {
                let _ = write!(out, " ({} {})", r.var, r.op.name());
            }
            out.push(')');
            print_block(out, &p.body, depth + 1);
        }
        StmtKind::Return { vars } => {
            head(out, depth, "return", s);
            for v in vars {
                let _ = write!(out, " {v}");
            }
        }
        StmtKind::Partitioned { array } => {
            head(out, depth, "partitioned", s);
            let _ = write!(out, " {array}");
        }
        StmtKind::Checkpoint { vars, index_var } => {
            head(out, depth, "checkpoint", s);
            let _ = write!(out, " {index_var} ({})", vars.join(" "));
        }
        StmtKind::CheckpointCleanup => head(out, depth, "checkpoint-cleanup", s),
        StmtKind::CheckpointRestore { vars, index_var, start_var, default_start } => {
            head(out, depth, "checkpoint-restore", s);
            let _ = write!(out, " {index_var} {start_var} ({}) {}", vars.join(" "), expr_text(default_start));
        }
        StmtKind::Partition { extent, start, size } => {
            head(out, depth, "partition", s);
            let _ = write!(out, " {extent} {start} {size}");
        }
        StmtKind::BlockRead { array, dataset, file, start, size } => {
            head(out, depth, "block-read", s);
            let _ = write!(out, " {array} {} {} {start} {size}", quote(dataset), expr_text(file));
        }
        StmtKind::BlockWrite { array, dataset, file, start, size } => {
            head(out, depth, "block-write", s);
            let _ = write!(out, " {array} {} {} {start} {size}", quote(dataset), expr_text(file));
        }
        StmtKind::Allreduce { var, op } => {
            head(out, depth, "allreduce", s);
            let _ = write!(out, " {var} {}", op.name());
        }
        StmtKind::Bcast { var, root } => {
            head(out, depth, "bcast", s);
            let _ = write!(out, " {var} {root}");
        }
        StmtKind::OnRoot(inner) => {
            head(out, depth, "on-root", s);
            print_block(out, std::slice::from_ref(inner.as_ref()), depth + 1);
        }
    }
    out.push(')');
}

fn loops_text(loops: &[LoopNest]) -> String {
    let mut s = String::from("(loops");
    for l in loops {
        let _ = write!(s, " ({} {} {})", l.var, expr_text(&l.lo), expr_text(&l.hi));
    }
    s.push(')');
    s
}

fn dims_text(d: &[Extent]) -> String {
    let parts: Vec<String> = d.iter().map(|e| e.to_string()).collect();
    format!("({})", parts.join(" "))
}

fn list_text(es: &[Expr]) -> String {
    let parts: Vec<String> = es.iter().map(expr_text).collect();
    format!("({})", parts.join(" "))
}

fn quote(s: &str) -> String {
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

pub fn f64_text(v: f64) -> String {
    if v.is_nan() {
        "+nan".into()
    } else if v == f64::INFINITY {
        "+inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        format!("{v:?}")
    }
}

pub fn expr_text(e: &Expr) -> String {
    match e {
        Expr::Lit(Lit::F64(v)) => f64_text(*v),
        Expr::Lit(Lit::I64(v)) => v.to_string(),
        Expr::Lit(Lit::Bool(b)) => b.to_string(),
        Expr::Lit(Lit::Str(s)) => quote(s),
        Expr::Var(v) => v.clone(),
        Expr::Read { array, index } => {
            let mut s = format!("(read {array}");
            for i in index {
                let _ = write!(s, " {}", expr_text(i));
            }
            s.push(')');
            s
        }
        Expr::Bin(op, a, b) => format!("({} {} {})", op.symbol(), expr_text(a), expr_text(b)),
        Expr::Un(op, a) => format!("({} {})", op.name(), expr_text(a)),
        Expr::Select(c, a, b) => format!("(select {} {} {})", expr_text(c), expr_text(a), expr_text(b)),
        Expr::RandAt { stream, index, dims } => {
            format!("(rand {stream} {} {})", list_text(index), dims_text(dims))
        }
    }
}

// ----------------------------------------------------------------- reading

#[derive(Clone, Debug, PartialEq)]
enum Sexp {
    Atom(String),
    Str(String),
    List(Vec<Sexp>),
}

fn tokenize_sexp(src: &str) -> PResult<Sexp> {
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let mut chars = src.chars().peekable();
    while let Some(&c) = chars.peek() {
        match c {
            ';' => {
                while let Some(&c) = chars.peek() {
                    if c == '\n' {
                        break;
                    }
                    chars.next();
                }
            }
            c if c.is_whitespace() => {
                chars.next();
            }
            '(' => {
                chars.next();
                stack.push(Vec::new());
            }
            ')' => {
                chars.next();
                let done = stack.pop().unwrap();
                match stack.last_mut() {
                    Some(top) => top.push(Sexp::List(done)),
                    None => return perr("unbalanced `)`"),
                }
            }
            '"' => {
                chars.next();
                let mut s = String::new();
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some('n') => s.push('\n'),
                            Some(c) => s.push(c),
                            None => return perr("unterminated string"),
                        },
                        Some(c) => s.push(c),
                        None => return perr("unterminated string"),
                    }
                }
                stack.last_mut().unwrap().push(Sexp::Str(s));
            }
            _ => {
                let mut a = String::new();
                while let Some(&c) = chars.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    a.push(c);
                    chars.next();
                }
                stack.last_mut().unwrap().push(Sexp::Atom(a));
            }
        }
    }
    if stack.len() != 1 {
        return perr("unbalanced `(`");
    }
    let mut top = stack.pop().unwrap();
    if top.len() != 1 {
        return perr(format!("expected one top-level form, found {}", top.len()));
    }
    Ok(top.pop().unwrap())
}

fn atom(s: &Sexp) -> PResult<&str> {
    match s {
        Sexp::Atom(a) => Ok(a),
        other => perr(format!("expected atom, found {other:?}")),
    }
}

fn list(s: &Sexp) -> PResult<&[Sexp]> {
    match s {
        Sexp::List(l) => Ok(l),
        other => perr(format!("expected list, found {other:?}")),
    }
}

fn string(s: &Sexp) -> PResult<String> {
    match s {
        Sexp::Str(v) => Ok(v.clone()),
        other => perr(format!("expected string, found {other:?}")),
    }
}

fn tagged<'a>(s: &'a Sexp, name: &str) -> PResult<&'a [Sexp]> {
    let l = list(s)?;
    match l.first() {
        Some(Sexp::Atom(a)) if a == name => Ok(&l[1..]),
        _ => perr(format!("expected ({name} ...)")),
    }
}

fn parse_bool(s: &Sexp) -> PResult<bool> {
    match atom(s)? {
        "true" => Ok(true),
        "false" => Ok(false),
        a => perr(format!("expected bool, found `{a}`")),
    }
}

fn parse_extent(s: &Sexp) -> PResult<Extent> {
    let a = atom(s)?;
    Ok(match a.parse::<i64>() {
        Ok(c) => Extent::Const(c),
        Err(_) => Extent::Sym(a.to_string()),
    })
}

fn parse_dims(s: &Sexp) -> PResult<Vec<Extent>> {
    list(s)?.iter().map(parse_extent).collect()
}

fn parse_type(s: &Sexp) -> PResult<Type> {
    match s {
        Sexp::Atom(a) if a == "str" => Ok(Type::Str),
        Sexp::Atom(a) => {
            ScalarKind::from_name(a).map(Type::Scalar).ok_or_else(|| ParseError(format!("unknown type `{a}`")))
        }
        Sexp::List(l) => {
            let elem = ScalarKind::from_name(atom(l.first().ok_or(ParseError("empty type".into()))?)?)
                .ok_or_else(|| ParseError("bad element kind".into()))?;
            let dims = l[1..].iter().map(parse_extent).collect::<PResult<_>>()?;
            Ok(Type::Array(ArrayType::new(elem, dims)))
        }
        other => perr(format!("bad type {other:?}")),
    }
}

fn parse_f64_atom(a: &str) -> Option<f64> {
    match a {
        "+inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        "+nan" => Some(f64::NAN),
        _ if a.contains(['.', 'e', 'E']) => a.parse().ok(),
        _ => None,
    }
}

fn parse_expr_sexp(s: &Sexp) -> PResult<Expr> {
    match s {
        Sexp::Str(v) => Ok(Expr::Lit(Lit::Str(v.clone()))),
        Sexp::Atom(a) => {
            let first = a.chars().next().unwrap_or(' ');
            if first.is_ascii_digit() || first == '-' || first == '+' {
                if let Some(f) = parse_f64_atom(a) {
                    return Ok(Expr::f64(f));
                }
                return a.parse::<i64>().map(Expr::i64).map_err(|_| ParseError(format!("bad number `{a}`")));
            }
            Ok(match a.as_str() {
                "true" => Expr::Lit(Lit::Bool(true)),
                "false" => Expr::Lit(Lit::Bool(false)),
                _ => Expr::Var(a.clone()),
            })
        }
        Sexp::List(l) => {
            let h = atom(l.first().ok_or(ParseError("empty expression".into()))?)?;
            let args = &l[1..];
            match h {
                "read" => {
                    let array = atom(args.first().ok_or(ParseError("read needs array".into()))?)?.to_string();
                    let index = args[1..].iter().map(parse_expr_sexp).collect::<PResult<_>>()?;
                    Ok(Expr::Read { array, index })
                }
                "select" if args.len() == 3 => {
                    Ok(Expr::select(parse_expr_sexp(&args[0])?, parse_expr_sexp(&args[1])?, parse_expr_sexp(&args[2])?))
                }
                "rand" if args.len() == 3 => Ok(Expr::RandAt {
                    stream: atom(&args[0])?.parse().map_err(|_| ParseError("bad stream".into()))?,
                    index: list(&args[1])?.iter().map(parse_expr_sexp).collect::<PResult<_>>()?,
                    dims: parse_dims(&args[2])?,
                }),
                _ => {
                    if args.len() == 2 {
                        if let Some(op) = BinOp::from_symbol(h) {
                            return Ok(Expr::bin(op, parse_expr_sexp(&args[0])?, parse_expr_sexp(&args[1])?));
                        }
                    }
                    if args.len() == 1 {
                        if let Some(op) = UnOp::from_name(h) {
                            return Ok(Expr::un(op, parse_expr_sexp(&args[0])?));
                        }
                    }
                    perr(format!("unknown expression form `{h}` with {} operands", args.len()))
                }
            }
        }
    }
}

fn parse_span(s: &Sexp) -> PResult<Span> {
    let a = atom(s)?;
    let rest = a.strip_prefix('@').ok_or_else(|| ParseError(format!("expected span, found `{a}`")))?;
    let (l, c) = rest.split_once(':').ok_or_else(|| ParseError("bad span".into()))?;
    Ok(Span::new(
        l.parse().map_err(|_| ParseError("bad span line".into()))?,
        c.parse().map_err(|_| ParseError("bad span col".into()))?,
    ))
}

fn parse_loops(s: &Sexp) -> PResult<Vec<LoopNest>> {
    tagged(s, "loops")?
        .iter()
        .map(|l| {
            let l = list(l)?;
            if l.len() != 3 {
                return perr("loop nest needs (var lo hi)");
            }
            Ok(LoopNest { var: atom(&l[0])?.to_string(), lo: parse_expr_sexp(&l[1])?, hi: parse_expr_sexp(&l[2])? })
        })
        .collect()
}

fn parse_var_list(s: &Sexp) -> PResult<Vec<Var>> {
    list(s)?.iter().map(|a| atom(a).map(str::to_string)).collect()
}

fn parse_stmts(items: &[Sexp]) -> PResult<Vec<Stmt>> {
    items.iter().map(parse_stmt).collect()
}

fn parse_stmt(s: &Sexp) -> PResult<Stmt> {
    let l = list(s)?;
    if l.len() < 2 {
        return perr("statement needs a head and a span");
    }
    let h = atom(&l[0])?;
    let span = parse_span(&l[1])?;
    let mut rest = &l[2..];
    let mut tag = None;
    if let Some(Sexp::Atom(a)) = rest.first() {
        if let Some(t) = a.strip_prefix(':') {
            tag = Some(PatternTag::from_name(t).ok_or_else(|| ParseError(format!("unknown tag `{t}`")))?);
            rest = &rest[1..];
        }
    }
    let need = |n: usize| -> PResult<()> {
        if rest.len() < n {
            perr(format!("`{h}` needs at least {n} operands"))
        } else {
            Ok(())
        }
    };
    let a = |i: usize| -> PResult<Var> { atom(&rest[i]).map(str::to_string) };
    let kind = match h {
        "assign" => {
            need(2)?;
            StmtKind::Assign { lhs: a(0)?, rhs: parse_expr_sexp(&rest[1])? }
        }
        "map" => {
            need(2)?;
            let opl = list(&rest[1])?;
            let kind = atom(opl.first().ok_or(ParseError("empty map op".into()))?)?;
            let arg = opl.get(1).ok_or(ParseError("map op needs operand".into()))?;
            let op = match kind {
                "bin" => MapOp::Bin(BinOp::from_symbol(atom(arg)?).ok_or(ParseError("bad binop".into()))?),
                "un" => MapOp::Un(UnOp::from_name(atom(arg)?).ok_or(ParseError("bad unop".into()))?),
                "rand" => MapOp::Rand { stream: atom(arg)?.parse().map_err(|_| ParseError("bad stream".into()))? },
                "fill" => MapOp::Fill(match parse_expr_sexp(arg)? {
                    Expr::Lit(Lit::F64(v)) => v,
                    _ => return perr("fill needs a float"),
                }),
                other => return perr(format!("unknown map op `{other}`")),
            };
            let args = rest[2..]
                .iter()
                .map(|x| {
                    let xl = list(x)?;
                    match (xl.first().map(atom).transpose()?, xl.get(1)) {
                        (Some("array"), Some(v)) => Ok(Operand::Array(atom(v)?.to_string())),
                        (Some("scalar"), Some(e)) => Ok(Operand::Scalar(parse_expr_sexp(e)?)),
                        _ => perr("bad map operand"),
                    }
                })
                .collect::<PResult<_>>()?;
            StmtKind::ArrayOp { lhs: a(0)?, op: ArrayOp::Map { op, args } }
        }
        "reduce" => {
            need(3)?;
            let op = ReduceOp::from_name(atom(&rest[1])?).ok_or(ParseError("bad reduce op".into()))?;
            StmtKind::ArrayOp { lhs: a(0)?, op: ArrayOp::Reduce { op, arg: a(2)? } }
        }
        "comprehension" => {
            need(2)?;
            StmtKind::ArrayOp {
                lhs: a(0)?,
                op: ArrayOp::Comprehension { loops: parse_loops(&rest[1])?, body: parse_stmts(&rest[2..])? },
            }
        }
        "write" => {
            need(3)?;
            StmtKind::ArrayWrite {
                array: a(0)?,
                index: list(&rest[1])?.iter().map(parse_expr_sexp).collect::<PResult<_>>()?,
                value: parse_expr_sexp(&rest[2])?,
            }
        }
        "reduce-update" => {
            need(4)?;
            StmtKind::ReduceUpdate {
                target: a(0)?,
                index: list(&rest[1])?.iter().map(parse_expr_sexp).collect::<PResult<_>>()?,
                op: ReduceOp::from_name(atom(&rest[2])?).ok_or(ParseError("bad reduce op".into()))?,
                value: parse_expr_sexp(&rest[3])?,
            }
        }
        "gemm" => {
            need(5)?;
            StmtKind::Gemm { out: a(0)?, x: a(1)?, xt: parse_bool(&rest[2])?, y: a(3)?, yt: parse_bool(&rest[4])? }
        }
        "alloc" => {
            need(2)?;
            StmtKind::Alloc { array: a(0)?, dims: parse_dims(&rest[1])? }
        }
        "local-alloc" => {
            need(3)?;
            StmtKind::LocalAlloc { array: a(0)?, dims: parse_dims(&rest[1])?, local_size: a(2)? }
        }
        "size-query" => {
            need(3)?;
            StmtKind::SizeQuery {
                outs: parse_var_list(&rest[0])?,
                dataset: string(&rest[1])?,
                file: parse_expr_sexp(&rest[2])?,
            }
        }
        "data-source" => {
            need(3)?;
            StmtKind::DataSource { array: a(0)?, dataset: string(&rest[1])?, file: parse_expr_sexp(&rest[2])? }
        }
        "data-sink" => {
            need(3)?;
            StmtKind::DataSink { array: a(0)?, dataset: string(&rest[1])?, file: parse_expr_sexp(&rest[2])? }
        }
        "call" => {
            need(3)?;
            let r = a(0)?;
            let known = match atom(&rest[2])? {
                "known" => true,
                "unknown" => false,
                other => return perr(format!("expected known/unknown, found `{other}`")),
            };
            StmtKind::Call {
                result: if r == "-" { None } else { Some(r) },
                name: a(1)?,
                args: rest[3..].iter().map(parse_expr_sexp).collect::<PResult<_>>()?,
                known,
            }
        }
        "for" => {
            need(3)?;
            StmtKind::For {
                var: a(0)?,
                lo: parse_expr_sexp(&rest[1])?,
                hi: parse_expr_sexp(&rest[2])?,
                body: parse_stmts(&rest[3..])?,
            }
        }
        "parfor" => {
            need(4)?;
            let id = ParforId(atom(&rest[0])?.parse().map_err(|_| ParseError("bad parfor id".into()))?);
            let origin = PatternTag::from_name(atom(&rest[1])?).ok_or(ParseError("bad parfor origin".into()))?;
            let loops = parse_loops(&rest[2])?;
            let reductions = tagged(&rest[3], "reductions")?
                .iter()
                .map(|r| {
                    let r = list(r)?;
                    if r.len() != 2 {
                        return perr("reduction needs (var op)");
                    }
                    Ok(Reduction {
                        var: atom(&r[0])?.to_string(),
                        op: ReduceOp::from_name(atom(&r[1])?).ok_or(ParseError("bad reduce op".into()))?,
                    })
                })
                .collect::<PResult<_>>()?;
            StmtKind::Parfor(Box::new(Parfor { id, loops, reductions, body: parse_stmts(&rest[4..])?, origin }))
        }
        "return" => {
            StmtKind::Return { vars: rest.iter().map(|x| atom(x).map(str::to_string)).collect::<PResult<_>>()? }
        }
        "partitioned" => {
            need(1)?;
            StmtKind::Partitioned { array: a(0)? }
        }
        "checkpoint" => {
            need(2)?;
            StmtKind::Checkpoint { index_var: a(0)?, vars: parse_var_list(&rest[1])? }
        }
        "checkpoint-cleanup" => StmtKind::CheckpointCleanup,
        "checkpoint-restore" => {
            need(4)?;
            StmtKind::CheckpointRestore {
                index_var: a(0)?,
                start_var: a(1)?,
                vars: parse_var_list(&rest[2])?,
                default_start: parse_expr_sexp(&rest[3])?,
            }
        }
        "partition" => {
            need(3)?;
            StmtKind::Partition { extent: parse_extent(&rest[0])?, start: a(1)?, size: a(2)? }
        }
        "block-read" | "block-write" => {
            need(5)?;
            let (array, dataset, file, start, size) =
                (a(0)?, string(&rest[1])?, parse_expr_sexp(&rest[2])?, a(3)?, a(4)?);
            if h == "block-read" {
                StmtKind::BlockRead { array, dataset, file, start, size }
            } else {
                StmtKind::BlockWrite { array, dataset, file, start, size }
            }
        }
        "allreduce" => {
            need(2)?;
            StmtKind::Allreduce {
                var: a(0)?,
                op: ReduceOp::from_name(atom(&rest[1])?).ok_or(ParseError("bad reduce op".into()))?,
            }
        }
        "bcast" => {
            need(2)?;
            StmtKind::Bcast { var: a(0)?, root: atom(&rest[1])?.parse().map_err(|_| ParseError("bad root".into()))? }
        }
        "on-root" => {
            need(1)?;
            StmtKind::OnRoot(Box::new(parse_stmt(&rest[0])?))
        }
        other => return perr(format!("unknown statement `{other}`")),
    };
    Ok(Stmt { kind, span, tag })
}

pub fn parse_function(src: &str) -> Result<FunctionIR, ParseError> {
    let top = tokenize_sexp(src)?;
    let items = tagged(&top, "function")?;
    if items.len() != 4 {
        return perr("function needs name, params, symbols and body");
    }
    let name = atom(&items[0])?.to_string();
    let params = tagged(&items[1], "params")?
        .iter()
        .map(|p| {
            let p = list(p)?;
            if p.len() != 2 {
                return perr("param needs (name type)");
            }
            Ok(Param { name: atom(&p[0])?.to_string(), ty: parse_type(&p[1])? })
        })
        .collect::<PResult<_>>()?;
    let mut symbols = BTreeMap::new();
    for s in tagged(&items[2], "symbols")? {
        let s = list(s)?;
        if s.len() != 2 {
            return perr("symbol needs (name type)");
        }
        symbols.insert(atom(&s[0])?.to_string(), parse_type(&s[1])?);
    }
    let body = parse_stmts(tagged(&items[3], "body")?)?;
    Ok(FunctionIR { name, params, body, symbols })
}

pub fn parse_expr(src: &str) -> Result<Expr, ParseError> {
    parse_expr_sexp(&tokenize_sexp(src)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expr_roundtrip_basic() {
        let e = Expr::bin(
            BinOp::Sub,
            Expr::bin(BinOp::Mul, Expr::f64(2.0), Expr::read("w", vec![Expr::var("i#1"), Expr::i64(-3)])),
            Expr::un(UnOp::Exp, Expr::f64(f64::NEG_INFINITY)),
        );
        let t = expr_text(&e);
        assert_eq!(t, "(- (* 2.0 (read w i#1 -3)) (exp -inf))");
        assert_eq!(parse_expr(&t).unwrap(), e);
    }

    #[test]
    fn float_literals_keep_kind() {
        assert_eq!(parse_expr("1.0").unwrap(), Expr::f64(1.0));
        assert_eq!(parse_expr("1").unwrap(), Expr::i64(1));
        assert_eq!(parse_expr("1e-300").unwrap(), Expr::f64(1e-300));
    }

    #[test]
    fn rejects_unknown_statement() {
        let src = "(function f (params) (symbols) (body (frobnicate @1:1)))";
        assert!(parse_function(src).is_err());
    }
}
