use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::visit::{for_each_expr, for_each_stmt, stmt_exprs};
use super::{ArrayOp, ArrayType, Expr, Extent, FunctionIR, Operand, Span, Stmt, StmtKind, Type};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub span: Span,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.span, self.message)
    }
}

/// Structural checks: shapes, single definition sites, symbol coverage and
/// the single trailing return. Never aborts; all violations are collected.
pub fn validate(f: &FunctionIR) -> Result<(), Vec<Violation>> {
    let mut v = Checker { f, out: Vec::new(), allocs: BTreeMap::new() };
    v.run();
    if v.out.is_empty() {
        Ok(())
    } else {
        Err(v.out)
    }
}

struct Checker<'a> {
    f: &'a FunctionIR,
    out: Vec<Violation>,
    allocs: BTreeMap<&'a str, usize>,
}

impl<'a> Checker<'a> {
    fn err(&mut self, span: Span, message: impl Into<String>) {
        self.out.push(Violation { span, message: message.into() });
    }

    fn run(&mut self) {
        let f = self.f;
        let returns = f.body.iter().filter(|s| matches!(s.kind, StmtKind::Return { .. })).count();
        let nested_return = {
            let mut n = 0;
            for_each_stmt(&f.body, &mut |s| {
                if matches!(s.kind, StmtKind::Return { .. }) {
                    n += 1;
                }
            });
            n - returns
        };
        if returns != 1 || nested_return != 0 {
            self.err(Span::default(), format!("expected exactly one return, found {}", returns + nested_return));
        } else if !matches!(f.body.last().map(|s| &s.kind), Some(StmtKind::Return { .. })) {
            self.err(Span::default(), "return must be the last statement");
        }

        let mut stmts: Vec<&'a Stmt> = Vec::new();
        for_each_stmt(&f.body, &mut |s| stmts.push(s));
        for s in stmts {
            self.check_stmt(s);
        }
        let allocs: Vec<(&str, usize)> = self.allocs.iter().map(|(k, v)| (*k, *v)).collect();
        for (name, n) in allocs {
            if n > 1 {
                self.err(Span::default(), format!("array `{name}` has multiple definitions ({n} allocation sites)"));
            }
        }
        for name in f.arrays() {
            if !self.allocs.contains_key(name) && !f.params.iter().any(|p| p.name == name) {
                self.err(Span::default(), format!("array `{name}` is never allocated"));
            }
        }
    }

    fn known(&mut self, span: Span, v: &str) -> Option<&'a Type> {
        match self.f.symbols.get(v) {
            Some(t) => Some(t),
            None => {
                self.err(span, format!("undefined variable `{v}`"));
                None
            }
        }
    }

    fn array(&mut self, span: Span, v: &str) -> Option<&'a ArrayType> {
        match self.known(span, v)? {
            Type::Array(a) => Some(a),
            _ => {
                self.err(span, format!("`{v}` is not an array"));
                None
            }
        }
    }

    fn same_shape(&mut self, span: Span, what: &str, a: &[Extent], b: &[Extent]) {
        if a != b {
            self.err(span, format!("shape mismatch in {what}: [{}] vs [{}]", join(a), join(b)));
        }
    }

    fn check_stmt(&mut self, s: &'a Stmt) {
        let span = s.span;
        for e in stmt_exprs(s) {
            self.check_expr(span, e);
        }
        match &s.kind {
            StmtKind::Assign { lhs, rhs } => {
                if let Some(Type::Array(lt)) = self.known(span, lhs) {
                    match rhs {
                        Expr::Var(r) => {
                            if let Some(rt) = self.array(span, r) {
                                self.same_shape(span, "array assignment", &lt.dims, &rt.dims);
                            }
                        }
                        _ => self.err(span, format!("array `{lhs}` assigned a scalar expression")),
                    }
                }
            }
            StmtKind::ArrayOp { lhs, op } => match op {
                ArrayOp::Map { args, .. } => {
                    if let Some(lt) = self.array(span, lhs) {
                        for a in args {
                            if let Operand::Array(v) = a {
                                if let Some(at) = self.array(span, v) {
                                    self.same_shape(span, "elementwise operation", &lt.dims, &at.dims);
                                }
                            }
                        }
                    }
                }
                ArrayOp::Reduce { arg, .. } => {
                    if let Some(Type::Array(_)) = self.known(span, lhs) {
                        self.err(span, format!("reduction result `{lhs}` must be scalar"));
                    }
                    self.array(span, arg);
                }
                ArrayOp::Comprehension { loops, .. } => {
                    if let Some(lt) = self.array(span, lhs) {
                        if lt.ndims() != loops.len() && loops.len() != 1 {
                            self.err(
                                span,
                                format!("comprehension over {} loops produces {}-d `{lhs}`", loops.len(), lt.ndims()),
                            );
                        }
                    }
                }
            },
            StmtKind::ArrayWrite { array, index, .. } => {
                if let Some(at) = self.array(span, array) {
                    if at.ndims() != index.len() {
                        self.err(
                            span,
                            format!("`{array}` has {} dims but is written with {} indices", at.ndims(), index.len()),
                        );
                    }
                }
            }
            StmtKind::ReduceUpdate { target, index, .. } => {
                if index.is_empty() {
                    self.known(span, target);
                } else if let Some(at) = self.array(span, target) {
                    if at.ndims() != index.len() {
                        self.err(
                            span,
                            format!("`{target}` has {} dims but is updated with {} indices", at.ndims(), index.len()),
                        );
                    }
                }
            }
            StmtKind::Gemm { out, x, xt, y, yt } => {
                let (Some(o), Some(a), Some(b)) = (self.array(span, out), self.array(span, x), self.array(span, y))
                else {
                    return;
                };
                if a.ndims() != 2 || b.ndims() != 2 || o.ndims() != 2 {
                    self.err(span, "matrix multiply operands must be 2-d");
                    return;
                }
                let (m, k1) = if *xt { (&a.dims[1], &a.dims[0]) } else { (&a.dims[0], &a.dims[1]) };
                let (k2, n) = if *yt { (&b.dims[1], &b.dims[0]) } else { (&b.dims[0], &b.dims[1]) };
                if k1 != k2 {
                    self.err(span, format!("inner dims {k1}≠{k2}"));
                }
                if &o.dims[0] != m || &o.dims[1] != n {
                    self.err(span, format!("output shape [{}] but product is [{m},{n}]", join(&o.dims)));
                }
            }
            StmtKind::Alloc { array, dims } | StmtKind::LocalAlloc { array, dims, .. } => {
                *self.allocs.entry(array.as_str()).or_default() += 1;
                if let Some(at) = self.array(span, array) {
                    self.same_shape(span, "allocation", &at.dims, dims);
                }
                for d in dims {
                    if let Extent::Sym(v) = d {
                        self.known(span, v);
                    }
                }
            }
            StmtKind::SizeQuery { outs, .. } => {
                for o in outs {
                    self.known(span, o);
                }
            }
            StmtKind::DataSource { array, .. }
            | StmtKind::DataSink { array, .. }
            | StmtKind::BlockRead { array, .. }
            | StmtKind::BlockWrite { array, .. }
            | StmtKind::Partitioned { array } => {
                self.array(span, array);
            }
            StmtKind::Call { result: Some(r), .. } => {
                self.known(span, r);
            }
            StmtKind::For { var, .. } => {
                self.known(span, var);
            }
            StmtKind::Parfor(p) => {
                for l in &p.loops {
                    self.known(span, &l.var);
                }
                for r in &p.reductions {
                    self.known(span, &r.var);
                }
                let mut seen = std::collections::BTreeSet::new();
                for l in &p.loops {
                    if !seen.insert(l.var.as_str()) {
                        self.err(span, format!("{}: duplicate index variable `{}`", p.id, l.var));
                    }
                }
            }
            StmtKind::Return { vars } => {
                for v in vars {
                    self.known(span, v);
                }
            }
            _ => {}
        }
    }

    fn check_expr(&mut self, span: Span, e: &'a Expr) {
        let mut reads: Vec<(&'a str, usize)> = Vec::new();
        let mut vars: Vec<&'a str> = Vec::new();
        for_each_expr(e, &mut |x| match x {
            Expr::Var(v) => vars.push(v),
            Expr::Read { array, index } => reads.push((array, index.len())),
            _ => {}
        });
        for v in vars {
            self.known(span, v);
        }
        for (a, n) in reads {
            if let Some(at) = self.array(span, a) {
                if at.ndims() != n {
                    self.err(span, format!("`{a}` has {} dims but is indexed with {n}", at.ndims()));
                }
            }
        }
    }
}

fn join(d: &[Extent]) -> String {
    d.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}
