//! AST to typed IR.
//!
//! Whole-array expressions become `ArrayOp`/`Gemm` statements writing
//! fresh temporaries (`tmp#k`); comprehension bodies are scalarized, with
//! vector subexpressions (slices, masks, whole vectors) folded by serial
//! inner loops. Array extents are symbolic; extents produced by
//! `DataSource` are unified on first use and renamed to the user's names
//! when the program destructures `size(A)`.

use std::collections::{BTreeMap, BTreeSet};

use super::ast::{self, AssignOp, ContainerKind, ExprKind, Index, ParamType, Program};
use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{expr_vars, for_each_stmt, for_each_stmt_mut, rename_extents, rename_in_stmts};
use crate::ir::*;

pub fn lower(prog: &Program) -> Result<FunctionIR> {
    let mut l = Lowerer::new(prog);
    l.params(prog)?;
    let mut body = Vec::new();
    let stmts = &prog.func.body;
    for (k, s) in stmts.iter().enumerate() {
        if let ast::StmtKind::Return(vals) = &s.kind {
            if k + 1 != stmts.len() {
                return Err(Error::at(ErrorKind::Type, s.span, "return must be the last statement"));
            }
            l.ret(vals, s.span, &mut body)?;
        } else {
            l.stmt(s, &mut body)?;
        }
    }
    if !matches!(body.last().map(|s: &Stmt| &s.kind), Some(StmtKind::Return { .. })) {
        let span = stmts.last().map(|s| s.span).unwrap_or(prog.func.span);
        body.push(Stmt::new(StmtKind::Return { vars: vec![] }, span));
    }
    if let Some((name, span)) = l.pending_2d.first() {
        return Err(Error::at(ErrorKind::Type, *span, format!("partitioned: unknown array `{name}`")));
    }
    l.f.body = body;
    l.finish_extents();
    l.prune_symbols();
    if let Err(vs) = validate(&l.f) {
        let v = &vs[0];
        return Err(Error::at(ErrorKind::Type, v.span, v.message.clone()));
    }
    Ok(l.f)
}

#[derive(Clone, Debug)]
enum Val {
    Scalar(Expr, ScalarKind),
    Str(Expr),
    Array(Var),
    Dims,
}

#[derive(Clone, Debug)]
enum Dest {
    None,
    New(String),
    Existing(Var),
}

/// A lazily indexed vector inside a comprehension body: element `var` of
/// the vector is `elem`, present only where `mask` holds.
#[derive(Clone, Debug)]
struct View {
    var: Var,
    len: Extent,
    elem: Expr,
    kind: ScalarKind,
    mask: Option<Expr>,
}

#[derive(Clone, Debug)]
enum EVal {
    S(Expr, ScalarKind),
    V(View),
}

struct Lowerer {
    f: FunctionIR,
    scope: BTreeMap<String, Var>,
    externs: BTreeSet<String>,
    str_params: BTreeSet<String>,
    next_stream: u32,
    /// Definition order of extent symbols; the earliest is the
    /// representative when two are unified.
    order: BTreeMap<Var, usize>,
    generated: BTreeSet<Var>,
    parent: BTreeMap<Var, Var>,
    aliased: BTreeSet<Var>,
    pending_2d: Vec<(String, Span)>,
}

fn terr(span: Span, msg: impl Into<String>) -> Error {
    Error::at(ErrorKind::Type, span, msg)
}

fn is_float_fn(name: &str) -> Option<UnOp> {
    match name {
        "exp" => Some(UnOp::Exp),
        "log" => Some(UnOp::Log),
        "sqrt" => Some(UnOp::Sqrt),
        "abs" => Some(UnOp::Abs),
        _ => None,
    }
}

fn reduce_fn(name: &str) -> Option<ReduceOp> {
    match name {
        "sum" => Some(ReduceOp::Sum),
        "prod" => Some(ReduceOp::Prod),
        "minimum" => Some(ReduceOp::Min),
        "maximum" => Some(ReduceOp::Max),
        _ => None,
    }
}

fn bin_kind(op: BinOp, a: ScalarKind, b: ScalarKind) -> ScalarKind {
    match op {
        _ if op.is_comparison() => ScalarKind::Bool,
        BinOp::Div => ScalarKind::F64,
        BinOp::Pow => {
            if a == ScalarKind::F64 || b == ScalarKind::F64 {
                ScalarKind::F64
            } else {
                ScalarKind::I64
            }
        }
        _ => a.join(b),
    }
}

fn un_kind(op: UnOp, a: ScalarKind) -> ScalarKind {
    match op {
        UnOp::Not => ScalarKind::Bool,
        UnOp::Exp | UnOp::Log | UnOp::Sqrt => ScalarKind::F64,
        UnOp::Neg | UnOp::Abs => a.join(ScalarKind::I64),
    }
}

fn reduce_kind(op: ReduceOp, k: ScalarKind) -> ScalarKind {
    match (op, k) {
        (ReduceOp::Sum | ReduceOp::Prod, ScalarKind::Bool) => ScalarKind::I64,
        (ReduceOp::Min | ReduceOp::Max, ScalarKind::Bool) => ScalarKind::I64,
        _ => k,
    }
}

impl Lowerer {
    fn new(prog: &Program) -> Self {
        let mut str_params = BTreeSet::new();
        scan_file_args(&prog.func.body, &mut str_params);
        Lowerer {
            f: FunctionIR { name: prog.func.name.clone(), params: vec![], body: vec![], symbols: BTreeMap::new() },
            scope: BTreeMap::new(),
            externs: prog.externs.iter().map(|(n, _)| n.clone()).collect(),
            str_params,
            next_stream: 1,
            order: BTreeMap::new(),
            generated: BTreeSet::new(),
            parent: BTreeMap::new(),
            aliased: BTreeSet::new(),
            pending_2d: Vec::new(),
        }
    }

    fn params(&mut self, prog: &Program) -> Result<()> {
        for p in &prog.func.params {
            if self.scope.contains_key(&p.name) {
                return Err(terr(p.span, format!("duplicate parameter `{}`", p.name)));
            }
            let ty = match p.ty {
                Some(ParamType::Str) => Type::Str,
                Some(ParamType::Scalar(k)) => Type::Scalar(k),
                None if self.str_params.contains(&p.name) => Type::Str,
                None => Type::Scalar(ScalarKind::I64),
            };
            self.f.symbols.insert(p.name.clone(), ty.clone());
            self.scope.insert(p.name.clone(), p.name.clone());
            self.define_order(&p.name);
            self.f.params.push(Param { name: p.name.clone(), ty });
        }
        Ok(())
    }

    fn define_order(&mut self, v: &str) {
        let n = self.order.len();
        self.order.entry(v.to_string()).or_insert(n);
    }

    /// A new IR variable for surface name `name`, preferring the name
    /// itself.
    fn new_var(&mut self, name: &str, ty: Type) -> Var {
        let v = if !self.f.symbols.contains_key(name) { name.to_string() } else { self.f.fresh(name) };
        self.f.symbols.insert(v.clone(), ty);
        v
    }

    fn fresh(&mut self, base: &str, ty: Type) -> Var {
        let v = self.f.fresh(base);
        self.f.symbols.insert(v.clone(), ty);
        v
    }

    fn lookup(&self, name: &str) -> Option<&Var> {
        self.scope.get(name)
    }

    fn array_ty(&self, v: &str) -> ArrayType {
        self.f.array_type(v).cloned().expect("array symbol")
    }

    // ------------------------------------------------------------ extents

    fn canon(&self, e: &Extent) -> Extent {
        match e {
            Extent::Sym(v) => {
                let mut cur = v;
                while let Some(p) = self.parent.get(cur) {
                    cur = p;
                }
                Extent::Sym(cur.clone())
            }
            c => c.clone(),
        }
    }

    fn canon_dims(&self, d: &[Extent]) -> Vec<Extent> {
        d.iter().map(|e| self.canon(e)).collect()
    }

    fn unify(&mut self, a: &Extent, b: &Extent, span: Span, what: &str) -> Result<()> {
        let (ca, cb) = (self.canon(a), self.canon(b));
        if ca == cb {
            return Ok(());
        }
        if let (Extent::Sym(x), Extent::Sym(y)) = (&ca, &cb) {
            let gx = self.generated.contains(x);
            let gy = self.generated.contains(y);
            let ox = self.order.get(x).copied().unwrap_or(usize::MAX);
            let oy = self.order.get(y).copied().unwrap_or(usize::MAX);
            if gy && (!gx || ox <= oy) {
                self.parent.insert(y.clone(), x.clone());
                return Ok(());
            }
            if gx {
                self.parent.insert(x.clone(), y.clone());
                return Ok(());
            }
        }
        Err(terr(span, format!("{what}: {ca}≠{cb}")))
    }

    fn unify_dims(&mut self, a: &[Extent], b: &[Extent], span: Span, what: &str) -> Result<()> {
        if a.len() != b.len() {
            return Err(terr(span, format!("{what}: {}-d vs {}-d", a.len(), b.len())));
        }
        for (x, y) in a.iter().zip(b) {
            self.unify(x, y, span, what)?;
        }
        Ok(())
    }

    fn same_dims(&self, a: &[Extent], b: &[Extent]) -> bool {
        self.canon_dims(a) == self.canon_dims(b)
    }

    /// An extent for a scalar value; non-trivial expressions are bound to
    /// a fresh integer first.
    fn extent_of(&mut self, v: Val, span: Span, out: &mut Vec<Stmt>) -> Result<Extent> {
        match v {
            Val::Scalar(e, k) => {
                if k != ScalarKind::I64 {
                    return Err(terr(span, "array dimensions must be integers"));
                }
                match &e {
                    Expr::Lit(Lit::I64(c)) => {
                        if *c < 0 {
                            return Err(terr(span, "array dimensions must be non-negative"));
                        }
                        Ok(Extent::Const(*c))
                    }
                    Expr::Var(v) => Ok(self.canon(&Extent::Sym(v.clone()))),
                    _ => {
                        let n = self.fresh("n", Type::Scalar(ScalarKind::I64));
                        self.define_order(&n);
                        out.push(Stmt::new(StmtKind::Assign { lhs: n.clone(), rhs: e }, span));
                        Ok(Extent::Sym(n))
                    }
                }
            }
            _ => Err(terr(span, "expected an integer dimension")),
        }
    }

    /// Apply extent unification to the finished function. Extents that the
    /// user named via `size` are renamed everywhere; merely unified ones keep
    /// their defining `size-query` output so the file's header is still read
    /// (and checked against the declared type at run time).
    fn finish_extents(&mut self) {
        let mut full = BTreeMap::new();
        let mut merged = BTreeSet::new();
        for g in &self.generated {
            if let Extent::Sym(c) = self.canon(&Extent::Sym(g.clone())) {
                if &c != g {
                    full.insert(g.clone(), c);
                    if !self.aliased.contains(g) {
                        merged.insert(g.clone());
                    }
                }
            }
        }
        if full.is_empty() {
            return;
        }
        let mut saved: Vec<Vec<Var>> = Vec::new();
        for_each_stmt(&self.f.body, &mut |s| {
            if let StmtKind::SizeQuery { outs, .. } = &s.kind {
                saved.push(outs.clone());
            }
        });
        rename_in_stmts(&mut self.f.body, &full);
        let mut k = 0;
        for_each_stmt_mut(&mut self.f.body, &mut |s| {
            if let StmtKind::SizeQuery { outs, .. } = &mut s.kind {
                for (o, orig) in outs.iter_mut().zip(&saved[k]) {
                    if merged.contains(orig) {
                        *o = orig.clone();
                    }
                }
                k += 1;
            }
        });
        for g in full.keys() {
            if !merged.contains(g) {
                self.f.symbols.remove(g);
            }
        }
        for t in self.f.symbols.values_mut() {
            if let Type::Array(a) = t {
                rename_extents(&mut a.dims, &full);
            }
        }
    }

    /// Drop symbols no statement mentions (element variables made
    /// redundant when two vector views were aligned).
    fn prune_symbols(&mut self) {
        let mut used: BTreeSet<Var> = self.f.params.iter().map(|p| p.name.clone()).collect();
        for_each_stmt(&self.f.body, &mut |s| {
            let e = crate::ir::visit::effects(s);
            used.extend(e.reads.into_iter().chain(e.defs).chain(e.updates));
            for x in crate::ir::visit::stmt_exprs(s) {
                used.extend(expr_vars(x));
            }
            match &s.kind {
                StmtKind::ArrayOp { op: ArrayOp::Comprehension { loops, .. }, .. } => {
                    used.extend(loops.iter().map(|l| l.var.clone()));
                }
                StmtKind::For { var, .. } => {
                    used.insert(var.clone());
                }
                _ => {}
            }
        });
        for t in self.f.symbols.values() {
            if let Type::Array(a) = t {
                for d in &a.dims {
                    if let Extent::Sym(v) = d {
                        used.insert(v.clone());
                    }
                }
            }
        }
        self.f.symbols.retain(|k, _| used.contains(k));
    }

    // -------------------------------------------------------- statements

    fn stmt(&mut self, s: &ast::Stmt, out: &mut Vec<Stmt>) -> Result<()> {
        let span = s.span;
        match &s.kind {
            ast::StmtKind::Assign { targets, op, value } => {
                if targets.len() > 1 {
                    return self.destructure(targets, value, span, out);
                }
                let target = &targets[0];
                match op {
                    AssignOp::Set => self.assign(target, value, span, out),
                    _ => self.compound(target, *op, value, span, out),
                }
            }
            ast::StmtKind::For { var, lo, hi, body } => {
                let lo_v = self.scalar(lo, out)?;
                let hi_v = self.scalar(hi, out)?;
                let v = self.new_var(var, Type::Scalar(ScalarKind::I64));
                let saved = self.scope.insert(var.clone(), v.clone());
                let mut inner = Vec::new();
                for st in body {
                    if let ast::StmtKind::Return(_) = st.kind {
                        return Err(terr(st.span, "return must be the last statement"));
                    }
                    self.stmt(st, &mut inner)?;
                }
                match saved {
                    Some(prev) => self.scope.insert(var.clone(), prev),
                    None => self.scope.remove(var),
                };
                out.push(Stmt::new(StmtKind::For { var: v, lo: lo_v, hi: hi_v, body: inner }, span));
                Ok(())
            }
            ast::StmtKind::Return(_) => Err(terr(span, "return must be the last statement")),
            ast::StmtKind::Partitioned(name) => {
                match self.lookup(name).cloned() {
                    Some(v) if self.f.is_array(&v) => {
                        out.push(Stmt::new(StmtKind::Partitioned { array: v }, span));
                    }
                    Some(_) => return Err(terr(span, format!("partitioned: `{name}` is not an array"))),
                    None => self.pending_2d.push((name.clone(), span)),
                }
                Ok(())
            }
            ast::StmtKind::Expr(e) => self.expr_stmt(e, out),
        }
    }

    fn expr_stmt(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<()> {
        let span = e.span;
        match &e.kind {
            ExprKind::Call(name, args) if name == "DataSink" => {
                let args = &strip_format(args);
                if args.len() != 3 {
                    return Err(terr(span, "DataSink(array, \"dataset\", file) takes 3 arguments"));
                }
                let Val::Array(a) = self.value(&args[0], Dest::None, out)? else {
                    return Err(terr(args[0].span, "DataSink expects an array"));
                };
                let ExprKind::Str(ds) = &args[1].kind else {
                    return Err(terr(args[1].span, "dataset name must be a string literal"));
                };
                let file = self.string(&args[2], out)?;
                out.push(Stmt::new(StmtKind::DataSink { array: a, dataset: ds.clone(), file }, span));
                Ok(())
            }
            ExprKind::Call(name, args) if self.externs.contains(name) => {
                let args = self.call_args(args, out)?;
                out.push(Stmt::new(StmtKind::Call { result: None, name: name.clone(), args, known: false }, span));
                Ok(())
            }
            _ => Err(terr(span, "expression statement has no effect")),
        }
    }

    fn destructure(&mut self, targets: &[String], value: &ast::Expr, span: Span, out: &mut Vec<Stmt>) -> Result<()> {
        let dims = match &value.kind {
            ExprKind::Call(name, args) if name == "size" && args.len() == 1 => {
                match self.value(&args[0], Dest::None, out)? {
                    Val::Array(a) => self.array_ty(&a).dims,
                    _ => return Err(terr(value.span, "size expects an array")),
                }
            }
            _ => return Err(terr(span, "multiple assignment is only supported for `size(A)`")),
        };
        if dims.len() != targets.len() {
            return Err(terr(span, format!("size returns {} values, {} targets given", dims.len(), targets.len())));
        }
        for (t, d) in targets.iter().zip(&dims) {
            self.bind_extent(t, d, span, out)?;
        }
        Ok(())
    }

    /// Bind surface name `t` to extent `d`: a fresh user name simply
    /// renames a file-derived extent; otherwise the value is copied.
    fn bind_extent(&mut self, t: &str, d: &Extent, span: Span, out: &mut Vec<Stmt>) -> Result<()> {
        let c = self.canon(d);
        if let Extent::Sym(g) = &c {
            if self.generated.contains(g)
                && !self.aliased.contains(g)
                && self.lookup(t).is_none()
                && !self.f.symbols.contains_key(t)
            {
                self.f.symbols.insert(t.to_string(), Type::Scalar(ScalarKind::I64));
                let o = self.order[g];
                self.order.insert(t.to_string(), o);
                self.parent.insert(g.clone(), t.to_string());
                self.aliased.insert(g.clone());
                self.scope.insert(t.to_string(), t.to_string());
                return Ok(());
            }
            if self.lookup(t) == Some(g) {
                return Ok(());
            }
        }
        let v = match self.lookup(t).cloned() {
            Some(v) if self.f.ty(&v) == Some(&Type::Scalar(ScalarKind::I64)) => v,
            Some(_) => return Err(terr(span, format!("`{t}` is not an integer variable"))),
            None => {
                let v = self.new_var(t, Type::Scalar(ScalarKind::I64));
                self.scope.insert(t.to_string(), v.clone());
                v
            }
        };
        self.define_order(&v);
        out.push(Stmt::new(StmtKind::Assign { lhs: v, rhs: c.to_expr() }, span));
        Ok(())
    }

    fn assign(&mut self, target: &str, value: &ast::Expr, span: Span, out: &mut Vec<Stmt>) -> Result<()> {
        if let ExprKind::Call(name, args) = &value.kind {
            let ext = matches!((name.as_str(), args.len()), ("size", 2) | ("length", 1));
            if ext && self.lookup(target).is_none() {
                if let Val::Array(a) = self.value(&args[0], Dest::None, out)? {
                    let dims = self.array_ty(&a).dims;
                    let d = if name == "length" {
                        if dims.len() != 1 {
                            None
                        } else {
                            Some(dims[0].clone())
                        }
                    } else {
                        match &args[1].kind {
                            ExprKind::Int(k) if *k >= 1 && (*k as usize) <= dims.len() => {
                                Some(dims[*k as usize - 1].clone())
                            }
                            _ => return Err(terr(args[1].span, "size(A, k) needs a literal dimension index")),
                        }
                    };
                    if let Some(d) = d {
                        return self.bind_extent(target, &d, span, out);
                    }
                }
            }
        }
        let existing = self.lookup(target).cloned();
        let dest = match &existing {
            Some(v) if self.f.is_array(v) => Dest::Existing(v.clone()),
            Some(_) => Dest::None,
            None => Dest::New(target.to_string()),
        };
        let val = self.value(value, dest, out)?;
        match val {
            Val::Array(a) => {
                match existing {
                    Some(x) if x == a => {}
                    Some(x) if self.f.is_array(&x) => {
                        let (xt, at) = (self.array_ty(&x), self.array_ty(&a));
                        if self.same_dims(&xt.dims, &at.dims) {
                            out.push(Stmt::new(StmtKind::Assign { lhs: x, rhs: Expr::Var(a) }, span));
                        } else if self.f.ty(&a).is_some() && a.starts_with(&format!("{target}#")) {
                            // Reassigned with a new shape: `a` is already the new version.
                            self.scope.insert(target.to_string(), a);
                        } else {
                            let v = self.fresh(target, Type::Array(at.clone()));
                            out.push(Stmt::new(StmtKind::Alloc { array: v.clone(), dims: at.dims.clone() }, span));
                            out.push(Stmt::new(StmtKind::Assign { lhs: v.clone(), rhs: Expr::Var(a) }, span));
                            self.scope.insert(target.to_string(), v);
                        }
                    }
                    Some(_) => return Err(terr(span, format!("`{target}` is a scalar; cannot assign an array"))),
                    None => {
                        if self.f.ty(&a).is_some() && (a == target || a.starts_with(&format!("{target}#"))) {
                            self.scope.insert(target.to_string(), a.clone());
                        } else {
                            let at = self.array_ty(&a);
                            let v = self.new_var(target, Type::Array(at.clone()));
                            out.push(Stmt::new(StmtKind::Alloc { array: v.clone(), dims: at.dims.clone() }, span));
                            out.push(Stmt::new(StmtKind::Assign { lhs: v.clone(), rhs: Expr::Var(a) }, span));
                            self.scope.insert(target.to_string(), v.clone());
                            self.defined_array(&v, out);
                        }
                    }
                }
                let cur = self.scope[target].clone();
                self.defined_array(&cur, out);
                Ok(())
            }
            Val::Scalar(e, k) => {
                let v = match existing {
                    Some(x) if self.f.is_array(&x) => {
                        return Err(terr(span, format!("`{target}` is an array; cannot assign a scalar")))
                    }
                    Some(x) => {
                        if let Some(Type::Scalar(old)) = self.f.ty(&x).cloned() {
                            if old != k {
                                let j = if old == ScalarKind::Bool || k == ScalarKind::Bool { k } else { old.join(k) };
                                self.f.symbols.insert(x.clone(), Type::Scalar(j));
                            }
                        } else {
                            return Err(terr(span, format!("`{target}` is a string")));
                        }
                        x
                    }
                    None => {
                        let v = self.new_var(target, Type::Scalar(k));
                        self.scope.insert(target.to_string(), v.clone());
                        v
                    }
                };
                self.define_order(&v);
                out.push(Stmt::new(StmtKind::Assign { lhs: v, rhs: e }, span));
                Ok(())
            }
            Val::Str(e) => {
                let v = match existing {
                    Some(x) if self.f.ty(&x) == Some(&Type::Str) => x,
                    Some(_) => return Err(terr(span, format!("`{target}` is not a string"))),
                    None => {
                        let v = self.new_var(target, Type::Str);
                        self.scope.insert(target.to_string(), v.clone());
                        v
                    }
                };
                out.push(Stmt::new(StmtKind::Assign { lhs: v, rhs: e }, span));
                Ok(())
            }
            Val::Dims => Err(terr(span, "`size(A)` must be destructured: `D, N = size(A)`")),
        }
    }

    /// Emit any deferred `partitioned` annotation for a newly bound array.
    fn defined_array(&mut self, v: &Var, out: &mut Vec<Stmt>) {
        let names: Vec<String> = self.scope.iter().filter(|(_, iv)| *iv == v).map(|(n, _)| n.clone()).collect();
        let mut keep = Vec::new();
        for (n, sp) in std::mem::take(&mut self.pending_2d) {
            if names.contains(&n) {
                out.push(Stmt::new(StmtKind::Partitioned { array: v.clone() }, sp));
            } else {
                keep.push((n, sp));
            }
        }
        self.pending_2d = keep;
    }

    fn compound(
        &mut self,
        target: &str,
        op: AssignOp,
        value: &ast::Expr,
        span: Span,
        out: &mut Vec<Stmt>,
    ) -> Result<()> {
        let bop = op.binop().expect("compound op");
        let Some(x) = self.lookup(target).cloned() else {
            return Err(terr(span, format!("unknown identifier `{target}`")));
        };
        let rhs = self.value(value, Dest::None, out)?;
        if self.f.is_array(&x) {
            let xv = Val::Array(x.clone());
            let r = self.map(MapOp::Bin(bop), vec![xv, rhs], Dest::Existing(x.clone()), span, out)?;
            if let Val::Array(a) = r {
                if a != x {
                    out.push(Stmt::new(StmtKind::Assign { lhs: x, rhs: Expr::Var(a) }, span));
                }
            }
            return Ok(());
        }
        let Some(Type::Scalar(k)) = self.f.ty(&x).cloned() else {
            return Err(terr(span, format!("`{target}` is not numeric")));
        };
        match rhs {
            Val::Scalar(e, rk) => {
                let nk = bin_kind(bop, k, rk);
                if nk != k {
                    self.f.symbols.insert(x.clone(), Type::Scalar(nk));
                }
                out.push(Stmt::new(StmtKind::Assign { lhs: x.clone(), rhs: Expr::bin(bop, Expr::Var(x), e) }, span));
                Ok(())
            }
            _ => Err(terr(span, format!("`{target}` is a scalar; right-hand side is not"))),
        }
    }

    fn ret(&mut self, vals: &[ast::Expr], span: Span, out: &mut Vec<Stmt>) -> Result<()> {
        let mut vars = Vec::new();
        for v in vals {
            match self.value(v, Dest::None, out)? {
                Val::Array(a) => vars.push(a),
                Val::Scalar(Expr::Var(x), _) => vars.push(x),
                Val::Scalar(e, k) => {
                    let r = self.fresh("ret", Type::Scalar(k));
                    out.push(Stmt::new(StmtKind::Assign { lhs: r.clone(), rhs: e }, v.span));
                    vars.push(r);
                }
                _ => return Err(terr(v.span, "only numbers and arrays can be returned")),
            }
        }
        out.push(Stmt::new(StmtKind::Return { vars }, span));
        Ok(())
    }

    // ------------------------------------------------------- expressions

    fn scalar(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<Expr> {
        match self.value(e, Dest::None, out)? {
            Val::Scalar(x, _) => Ok(x),
            _ => Err(terr(e.span, "expected a scalar")),
        }
    }

    fn string(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<Expr> {
        match self.value(e, Dest::None, out)? {
            Val::Str(x) => Ok(x),
            _ => Err(terr(e.span, "expected a string (file name)")),
        }
    }

    fn call_args(&mut self, args: &[ast::Expr], out: &mut Vec<Stmt>) -> Result<Vec<Expr>> {
        let mut r = Vec::new();
        for a in args {
            r.push(match self.value(a, Dest::None, out)? {
                Val::Array(v) => Expr::Var(v),
                Val::Scalar(x, _) | Val::Str(x) => x,
                Val::Dims => return Err(terr(a.span, "size(A) cannot be passed to a call")),
            });
        }
        Ok(r)
    }

    /// Pick the array an operation writes into.
    fn target(
        &mut self,
        dest: &Dest,
        ty: ArrayType,
        reads: &BTreeSet<Var>,
        elementwise: bool,
        span: Span,
        out: &mut Vec<Stmt>,
    ) -> Var {
        match dest {
            Dest::Existing(x) => {
                let xt = self.array_ty(x);
                if self.same_dims(&xt.dims, &ty.dims) && (elementwise || !reads.contains(x)) {
                    return x.clone();
                }
                let v = if self.same_dims(&xt.dims, &ty.dims) {
                    self.fresh("tmp", Type::Array(ty.clone()))
                } else {
                    self.fresh(x, Type::Array(ty.clone()))
                };
                out.push(Stmt::new(StmtKind::Alloc { array: v.clone(), dims: ty.dims }, span));
                v
            }
            Dest::New(name) => {
                let v = self.new_var(name, Type::Array(ty.clone()));
                out.push(Stmt::new(StmtKind::Alloc { array: v.clone(), dims: ty.dims }, span));
                v
            }
            Dest::None => {
                let v = self.fresh("tmp", Type::Array(ty.clone()));
                out.push(Stmt::new(StmtKind::Alloc { array: v.clone(), dims: ty.dims }, span));
                v
            }
        }
    }

    fn value(&mut self, e: &ast::Expr, dest: Dest, out: &mut Vec<Stmt>) -> Result<Val> {
        let span = e.span;
        match &e.kind {
            ExprKind::Int(v) => Ok(Val::Scalar(Expr::i64(*v), ScalarKind::I64)),
            ExprKind::Float(v) => Ok(Val::Scalar(Expr::f64(*v), ScalarKind::F64)),
            ExprKind::Bool(b) => Ok(Val::Scalar(Expr::Lit(Lit::Bool(*b)), ScalarKind::Bool)),
            ExprKind::Str(s) => Ok(Val::Str(Expr::Lit(Lit::Str(s.clone())))),
            ExprKind::Ident(name) => self.ident(name, span),
            ExprKind::Binary(sym, a, b) => {
                if sym.op == BinOp::Mul && !sym.dot {
                    let (xa, xt) = self.matmul_operand(a, out)?;
                    let (ya, yt) = self.matmul_operand(b, out)?;
                    if let (Val::Array(x), Val::Array(y)) = (&xa, &ya) {
                        return self.gemm(x.clone(), xt, y.clone(), yt, dest, span, out);
                    }
                    if xt || yt {
                        return Err(terr(span, "transpose is only supported on matrix-multiply operands"));
                    }
                    return self.binary(sym.op, xa, ya, dest, span, out);
                }
                let va = self.value(a, Dest::None, out)?;
                let vb = self.value(b, Dest::None, out)?;
                let arrays = matches!(va, Val::Array(_)) || matches!(vb, Val::Array(_));
                if arrays && !sym.dot && (sym.op.is_comparison() || sym.op == BinOp::Pow) {
                    return Err(terr(span, format!("use `.{}` for elementwise operations on arrays", sym.op.symbol())));
                }
                if arrays && !sym.dot && sym.op == BinOp::Div && matches!(vb, Val::Array(_)) {
                    return Err(terr(span, "use `./` to divide by an array"));
                }
                self.binary(sym.op, va, vb, dest, span, out)
            }
            ExprKind::Unary(op, a) => {
                let v = self.value(a, Dest::None, out)?;
                self.unary(*op, v, dest, span, out)
            }
            ExprKind::Transpose(_) => Err(terr(span, "transpose is only supported on matrix-multiply operands")),
            ExprKind::Call(name, args) => self.call(name, args, dest, span, out),
            ExprKind::Index(..) => Err(terr(span, "indexing is only supported inside comprehension bodies")),
            ExprKind::Comprehension { elem, body, gens } => self.comprehension(*elem, body, gens, dest, span, out),
            ExprKind::TypeLit(..) => Err(terr(span, "type literal outside of DataSource")),
        }
    }

    fn ident(&self, name: &str, span: Span) -> Result<Val> {
        let Some(v) = self.lookup(name) else {
            if name == "pi" {
                return Ok(Val::Scalar(Expr::f64(std::f64::consts::PI), ScalarKind::F64));
            }
            return Err(terr(span, format!("unknown identifier `{name}`")));
        };
        Ok(match self.f.ty(v).expect("bound symbol") {
            Type::Array(_) => Val::Array(v.clone()),
            Type::Scalar(k) => Val::Scalar(Expr::Var(v.clone()), *k),
            Type::Str => Val::Str(Expr::Var(v.clone())),
        })
    }

    fn matmul_operand(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<(Val, bool)> {
        if let ExprKind::Transpose(inner) = &e.kind {
            let v = self.value(inner, Dest::None, out)?;
            if !matches!(v, Val::Array(_)) {
                return Err(terr(e.span, "transpose of a scalar"));
            }
            return Ok((v, true));
        }
        Ok((self.value(e, Dest::None, out)?, false))
    }

    #[allow(clippy::too_many_arguments)]
    fn gemm(&mut self, x: Var, xt: bool, y: Var, yt: bool, dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        let (a, b) = (self.array_ty(&x), self.array_ty(&y));
        if a.ndims() != 2 || b.ndims() != 2 {
            return Err(terr(span, "matrix multiply operands must be 2-d (use reshape)"));
        }
        let (m, k1) = if xt { (&a.dims[1], &a.dims[0]) } else { (&a.dims[0], &a.dims[1]) };
        let (k2, n) = if yt { (&b.dims[1], &b.dims[0]) } else { (&b.dims[0], &b.dims[1]) };
        self.unify(k1, k2, span, "inner dims")?;
        let ty = ArrayType::new(ScalarKind::F64, vec![self.canon(m), self.canon(n)]);
        let reads: BTreeSet<Var> = [x.clone(), y.clone()].into_iter().collect();
        let o = self.target(&dest, ty, &reads, false, span, out);
        out.push(Stmt::new(StmtKind::Gemm { out: o.clone(), x, xt, y, yt }, span));
        Ok(Val::Array(o))
    }

    fn binary(&mut self, op: BinOp, a: Val, b: Val, dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        match (&a, &b) {
            (Val::Scalar(x, ka), Val::Scalar(y, kb)) => {
                Ok(Val::Scalar(Expr::bin(op, x.clone(), y.clone()), bin_kind(op, *ka, *kb)))
            }
            (Val::Array(_), Val::Array(_) | Val::Scalar(..)) | (Val::Scalar(..), Val::Array(_)) => {
                self.map(MapOp::Bin(op), vec![a, b], dest, span, out)
            }
            _ => Err(terr(span, format!("operator `{}` needs numeric operands", op.symbol()))),
        }
    }

    fn unary(&mut self, op: UnOp, v: Val, dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        match v {
            Val::Scalar(x, k) => Ok(Val::Scalar(Expr::un(op, x), un_kind(op, k))),
            Val::Array(_) => self.map(MapOp::Un(op), vec![v], dest, span, out),
            _ => Err(terr(span, format!("`{}` needs a numeric operand", op.name()))),
        }
    }

    fn map(&mut self, op: MapOp, args: Vec<Val>, dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        let mut dims: Option<Vec<Extent>> = None;
        let mut kinds = Vec::new();
        let mut operands = Vec::new();
        let mut reads = BTreeSet::new();
        for a in args {
            match a {
                Val::Array(v) => {
                    let t = self.array_ty(&v);
                    match &dims {
                        None => dims = Some(self.canon_dims(&t.dims)),
                        Some(d) => {
                            let d = d.clone();
                            self.unify_dims(&d, &t.dims, span, "shape mismatch in elementwise operation")?;
                        }
                    }
                    kinds.push(t.elem);
                    reads.insert(v.clone());
                    operands.push(Operand::Array(v));
                }
                Val::Scalar(x, k) => {
                    kinds.push(k);
                    reads.extend(expr_vars(&x));
                    operands.push(Operand::Scalar(x));
                }
                _ => return Err(terr(span, "elementwise operands must be numeric")),
            }
        }
        let dims = self.canon_dims(&dims.expect("map has an array operand"));
        let elem = match &op {
            MapOp::Bin(b) => bin_kind(*b, kinds[0], kinds[1]),
            MapOp::Un(u) => un_kind(*u, kinds[0]),
            MapOp::Rand { .. } | MapOp::Fill(_) => ScalarKind::F64,
        };
        let o = self.target(&dest, ArrayType::new(elem, dims), &reads, true, span, out);
        out.push(Stmt::new(StmtKind::ArrayOp { lhs: o.clone(), op: ArrayOp::Map { op, args: operands } }, span));
        Ok(Val::Array(o))
    }

    fn generate(&mut self, op: MapOp, dims: Vec<Extent>, dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        if dims.is_empty() || dims.len() > 2 {
            return Err(terr(span, "arrays must have 1 or 2 dimensions"));
        }
        let o = self.target(&dest, ArrayType::new(ScalarKind::F64, dims), &BTreeSet::new(), true, span, out);
        out.push(Stmt::new(StmtKind::ArrayOp { lhs: o.clone(), op: ArrayOp::Map { op, args: vec![] } }, span));
        Ok(Val::Array(o))
    }

    fn dims_args(&mut self, args: &[ast::Expr], span: Span, out: &mut Vec<Stmt>) -> Result<Vec<Extent>> {
        if args.len() == 1 {
            if let ExprKind::Call(n, a) = &args[0].kind {
                if n == "size" && a.len() == 1 {
                    if let Val::Array(v) = self.value(&a[0], Dest::None, out)? {
                        return Ok(self.canon_dims(&self.array_ty(&v).dims));
                    }
                }
            }
        }
        let mut dims = Vec::new();
        for a in args {
            let v = self.value(a, Dest::None, out)?;
            dims.push(self.extent_of(v, a.span, out)?);
        }
        if dims.is_empty() {
            return Err(terr(span, "expected dimensions"));
        }
        Ok(dims)
    }

    fn call(&mut self, name: &str, args: &[ast::Expr], dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        let nargs = |n: usize| -> Result<()> {
            if args.len() != n {
                Err(terr(span, format!("`{name}` takes {n} argument(s), {} given", args.len())))
            } else {
                Ok(())
            }
        };
        if let Some(op) = is_float_fn(name) {
            nargs(1)?;
            let v = self.value(&args[0], Dest::None, out)?;
            return self.unary(op, v, dest, span, out);
        }
        if let Some(op) = reduce_fn(name) {
            nargs(1)?;
            let Val::Array(a) = self.value(&args[0], Dest::None, out)? else {
                return Err(terr(span, format!("`{name}` expects an array")));
            };
            let k = reduce_kind(op, self.array_ty(&a).elem);
            let r = self.fresh(name, Type::Scalar(k));
            out.push(Stmt::new(StmtKind::ArrayOp { lhs: r.clone(), op: ArrayOp::Reduce { op, arg: a } }, span));
            return Ok(Val::Scalar(Expr::Var(r), k));
        }
        match name {
            "min" | "max" => {
                nargs(2)?;
                let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                let a = self.value(&args[0], Dest::None, out)?;
                let b = self.value(&args[1], Dest::None, out)?;
                self.binary(op, a, b, dest, span, out)
            }
            "rand" => {
                let dims = self.dims_args(args, span, out)?;
                let stream = self.next_stream;
                self.next_stream += 1;
                self.generate(MapOp::Rand { stream }, dims, dest, span, out)
            }
            "zeros" | "ones" => {
                let dims = self.dims_args(args, span, out)?;
                let v = if name == "zeros" { 0.0 } else { 1.0 };
                self.generate(MapOp::Fill(v), dims, dest, span, out)
            }
            "size" => {
                if args.is_empty() || args.len() > 2 {
                    return Err(terr(span, "size takes 1 or 2 arguments"));
                }
                let Val::Array(a) = self.value(&args[0], Dest::None, out)? else {
                    return Err(terr(span, "size expects an array"));
                };
                let dims = self.canon_dims(&self.array_ty(&a).dims);
                if args.len() == 1 {
                    return Ok(Val::Dims);
                }
                match &args[1].kind {
                    ExprKind::Int(k) if *k >= 1 && (*k as usize) <= dims.len() => {
                        Ok(Val::Scalar(dims[*k as usize - 1].to_expr(), ScalarKind::I64))
                    }
                    _ => Err(terr(args[1].span, "size(A, k) needs a literal dimension index")),
                }
            }
            "length" => {
                nargs(1)?;
                let Val::Array(a) = self.value(&args[0], Dest::None, out)? else {
                    return Err(terr(span, "length expects an array"));
                };
                let dims = self.canon_dims(&self.array_ty(&a).dims);
                let e = dims.iter().skip(1).fold(dims[0].to_expr(), |acc, d| Expr::bin(BinOp::Mul, acc, d.to_expr()));
                Ok(Val::Scalar(e, ScalarKind::I64))
            }
            "reshape" => {
                if args.len() < 2 {
                    return Err(terr(span, "reshape(A, dims...) needs target dimensions"));
                }
                let Val::Array(a) = self.value(&args[0], Dest::None, out)? else {
                    return Err(terr(span, "reshape expects an array"));
                };
                let dims = self.dims_args(&args[1..], span, out)?;
                let at = self.array_ty(&a);
                let last = self.canon(at.last_dim());
                if *dims.last().unwrap() != last && at.ndims() == 1 {
                    // The partitioned (last) extent is shared; the element
                    // count is checked at run time.
                    let d = dims.last().unwrap().clone();
                    self.unify(&last, &d, span, "reshape must preserve the last dimension")?;
                }
                let ty = ArrayType::new(at.elem, dims.clone());
                let o = self.target(&dest, ty, &[a.clone()].into_iter().collect(), false, span, out);
                let mut cargs = vec![Expr::Var(a)];
                cargs.extend(dims.iter().map(Extent::to_expr));
                out.push(Stmt::new(
                    StmtKind::Call { result: Some(o.clone()), name: "reshape".into(), args: cargs, known: true },
                    span,
                ));
                Ok(Val::Array(o))
            }
            "DataSource" => self.data_source(args, dest, span, out),
            "DataSink" => Err(terr(span, "DataSink is a statement, not a value")),
            "indmin" | "argmin" => Err(terr(span, format!("`{name}` is only supported inside comprehension bodies"))),
            _ if self.externs.contains(name) => {
                let cargs = self.call_args(args, out)?;
                let r = self.fresh(name, Type::Scalar(ScalarKind::F64));
                out.push(Stmt::new(
                    StmtKind::Call { result: Some(r.clone()), name: name.to_string(), args: cargs, known: false },
                    span,
                ));
                Ok(Val::Scalar(Expr::Var(r), ScalarKind::F64))
            }
            _ => Err(terr(span, format!("unknown function `{name}` (declare it with `extern {name}`)"))),
        }
    }

    fn data_source(&mut self, args: &[ast::Expr], dest: Dest, span: Span, out: &mut Vec<Stmt>) -> Result<Val> {
        let args = &strip_format(args);
        if args.len() != 3 {
            return Err(terr(span, "DataSource(Type, \"dataset\", file) takes 3 arguments"));
        }
        let ExprKind::TypeLit(container, elem) = args[0].kind else {
            return Err(terr(args[0].span, "expected `Vector{T}` or `Matrix{T}`"));
        };
        let ExprKind::Str(ds) = &args[1].kind else {
            return Err(terr(args[1].span, "dataset name must be a string literal"));
        };
        let file = self.string(&args[2], out)?;
        let ndims = if container == ContainerKind::Vector { 1 } else { 2 };
        let base = match &dest {
            Dest::New(n) => n.clone(),
            Dest::Existing(x) => x.split('#').next().unwrap_or(x).to_string(),
            Dest::None => "data".to_string(),
        };
        let mut outs = Vec::new();
        for k in 1..=ndims {
            let mut n = format!("{base}#d{k}");
            let mut j = 1;
            while self.f.symbols.contains_key(&n) {
                j += 1;
                n = format!("{base}#{j}d{k}");
            }
            self.f.symbols.insert(n.clone(), Type::Scalar(ScalarKind::I64));
            self.define_order(&n);
            self.generated.insert(n.clone());
            outs.push(n);
        }
        out.push(Stmt::new(StmtKind::SizeQuery { outs: outs.clone(), dataset: ds.clone(), file: file.clone() }, span));
        let ty = ArrayType::new(elem, outs.iter().map(|o| Extent::Sym(o.clone())).collect());
        let dest = match dest {
            Dest::Existing(_) => Dest::None,
            d => d,
        };
        let a = self.target(&dest, ty, &BTreeSet::new(), false, span, out);
        out.push(Stmt::new(StmtKind::DataSource { array: a.clone(), dataset: ds.clone(), file }, span));
        Ok(Val::Array(a))
    }

    // ---------------------------------------------------- comprehensions

    fn comprehension(
        &mut self,
        elem: Option<ScalarKind>,
        body: &ast::Expr,
        gens: &[ast::Generator],
        dest: Dest,
        span: Span,
        out: &mut Vec<Stmt>,
    ) -> Result<Val> {
        let saved_scope = self.scope.clone();
        let result = self.comprehension_inner(elem, body, gens, dest, span, out);
        self.scope = saved_scope;
        result
    }

    fn gen_loop(&mut self, g: &ast::Generator, out: &mut Vec<Stmt>) -> Result<(LoopNest, Extent)> {
        if !matches!(g.lo.kind, ExprKind::Int(1)) {
            return Err(terr(g.lo.span, "comprehension ranges must start at 1"));
        }
        let hv = self.value(&g.hi, Dest::None, out)?;
        let ext = self.extent_of(hv, g.hi.span, out)?;
        let v = self.fresh(&g.var, Type::Scalar(ScalarKind::I64));
        self.scope.insert(g.var.clone(), v.clone());
        Ok((LoopNest { var: v, lo: Expr::i64(1), hi: ext.to_expr() }, ext))
    }

    fn comprehension_inner(
        &mut self,
        elem: Option<ScalarKind>,
        body: &ast::Expr,
        gens: &[ast::Generator],
        dest: Dest,
        span: Span,
        out: &mut Vec<Stmt>,
    ) -> Result<Val> {
        if gens.len() > 2 {
            return Err(terr(span, "comprehensions have at most 2 generators"));
        }
        let mut loops = Vec::new();
        let mut dims = Vec::new();
        for g in gens {
            let (l, e) = self.gen_loop(g, out)?;
            loops.push(l);
            dims.push(e);
        }
        let mut stmts = Vec::new();
        let (index, value, kind, inner_loop): (Vec<Expr>, Expr, ScalarKind, Option<LoopNest>) =
            if let ExprKind::Comprehension { elem: ie, body: ib, gens: ig } = &body.kind {
                if gens.len() != 1 || ig.len() != 1 {
                    return Err(terr(body.span, "nested comprehensions must each have one generator"));
                }
                let (il, iext) = self.gen_loop(&ig[0], out)?;
                dims.insert(0, iext);
                let (v, k) = self.elem_scalar(ib, &mut stmts)?;
                let k = ie.unwrap_or(k);
                (vec![Expr::Var(il.var.clone()), Expr::Var(loops[0].var.clone())], v, k, Some(il))
            } else {
                let (v, k) = self.elem_scalar(body, &mut stmts)?;
                (loops.iter().map(|l| Expr::Var(l.var.clone())).collect(), v, k, None)
            };
        let kind = elem.unwrap_or(kind);
        let mut reads = BTreeSet::new();
        for_each_stmt(&stmts, &mut |s| {
            for e in crate::ir::visit::stmt_exprs(s) {
                reads.extend(expr_vars(e));
            }
        });
        reads.extend(expr_vars(&value));
        let ty = ArrayType::new(kind, self.canon_dims(&dims));
        let o = self.target(&dest, ty, &reads, false, span, out);
        stmts.push(Stmt::new(StmtKind::ArrayWrite { array: o.clone(), index, value }, span));
        let body_stmts = match inner_loop {
            Some(il) => vec![Stmt::new(StmtKind::For { var: il.var, lo: il.lo, hi: il.hi, body: stmts }, span)],
            None => stmts,
        };
        out.push(Stmt::new(
            StmtKind::ArrayOp { lhs: o.clone(), op: ArrayOp::Comprehension { loops, body: body_stmts } },
            span,
        ));
        Ok(Val::Array(o))
    }

    fn elem_scalar(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<(Expr, ScalarKind)> {
        match self.elem(e, out)? {
            EVal::S(x, k) => Ok((x, k)),
            EVal::V(_) => {
                Err(terr(e.span, "comprehension element must be a scalar (reduce vectors with sum, indmin, ...)"))
            }
        }
    }

    fn fresh_view_var(&mut self) -> Var {
        self.fresh("t", Type::Scalar(ScalarKind::I64))
    }

    fn view_of_array(&mut self, a: &Var, span: Span) -> Result<View> {
        let t = self.array_ty(a);
        if t.ndims() != 1 {
            return Err(terr(span, format!("`{a}` is {}-d; select a column or row with `:`", t.ndims())));
        }
        let var = self.fresh_view_var();
        Ok(View {
            elem: Expr::read(a.clone(), vec![Expr::Var(var.clone())]),
            var,
            len: self.canon(&t.dims[0]),
            kind: t.elem,
            mask: None,
        })
    }

    /// Rename `w`'s element variable to `v`'s so both index the same
    /// position.
    fn align(&mut self, v: &View, w: View, span: Span) -> Result<View> {
        self.unify(&v.len, &w.len, span, "vector length mismatch")?;
        let map: BTreeMap<Var, Var> = [(w.var.clone(), v.var.clone())].into_iter().collect();
        let mut elem = w.elem;
        crate::ir::visit::rename_in_expr(&mut elem, &map);
        let mask = w.mask.map(|mut m| {
            crate::ir::visit::rename_in_expr(&mut m, &map);
            m
        });
        Ok(View { var: v.var.clone(), len: v.len.clone(), elem, kind: w.kind, mask })
    }

    fn elem(&mut self, e: &ast::Expr, out: &mut Vec<Stmt>) -> Result<EVal> {
        let span = e.span;
        match &e.kind {
            ExprKind::Int(_) | ExprKind::Float(_) | ExprKind::Bool(_) => match self.value(e, Dest::None, out)? {
                Val::Scalar(x, k) => Ok(EVal::S(x, k)),
                _ => unreachable!(),
            },
            ExprKind::Ident(name) => match self.ident(name, span)? {
                Val::Scalar(x, k) => Ok(EVal::S(x, k)),
                Val::Array(a) => Ok(EVal::V(self.view_of_array(&a, span)?)),
                _ => Err(terr(span, "strings cannot be used in comprehensions")),
            },
            ExprKind::Index(base, idx) => self.elem_index(base, idx, span, out),
            ExprKind::Binary(sym, a, b) => {
                let va = self.elem(a, out)?;
                let vb = self.elem(b, out)?;
                let op = sym.op;
                match (va, vb) {
                    (EVal::S(x, ka), EVal::S(y, kb)) => Ok(EVal::S(Expr::bin(op, x, y), bin_kind(op, ka, kb))),
                    (EVal::V(v), EVal::S(y, kb)) => {
                        if !sym.dot && matches!(op, BinOp::Pow) || (!sym.dot && op.is_comparison()) {
                            return Err(terr(span, format!("use `.{}` for elementwise operations", op.symbol())));
                        }
                        Ok(EVal::V(View {
                            elem: Expr::bin(op, v.elem.clone(), y),
                            kind: bin_kind(op, v.kind, kb),
                            ..v
                        }))
                    }
                    (EVal::S(x, ka), EVal::V(v)) => {
                        if !sym.dot && (matches!(op, BinOp::Pow | BinOp::Div) || op.is_comparison()) {
                            return Err(terr(span, format!("use `.{}` for elementwise operations", op.symbol())));
                        }
                        Ok(EVal::V(View {
                            elem: Expr::bin(op, x, v.elem.clone()),
                            kind: bin_kind(op, ka, v.kind),
                            ..v
                        }))
                    }
                    (EVal::V(v), EVal::V(w)) => {
                        if !sym.dot && !matches!(op, BinOp::Add | BinOp::Sub) {
                            return Err(terr(
                                span,
                                format!("use `.{}` for elementwise operations on vectors", op.symbol()),
                            ));
                        }
                        let w = self.align(&v, w, span)?;
                        let mask = match (v.mask, w.mask) {
                            (Some(_), Some(_)) => return Err(terr(span, "cannot combine two masked vectors")),
                            (m, None) | (None, m) => m,
                        };
                        Ok(EVal::V(View {
                            var: v.var,
                            len: v.len,
                            elem: Expr::bin(op, v.elem, w.elem),
                            kind: bin_kind(op, v.kind, w.kind),
                            mask,
                        }))
                    }
                }
            }
            ExprKind::Unary(op, a) => match self.elem(a, out)? {
                EVal::S(x, k) => Ok(EVal::S(Expr::un(*op, x), un_kind(*op, k))),
                EVal::V(v) => {
                    Ok(EVal::V(View { elem: Expr::un(*op, v.elem.clone()), kind: un_kind(*op, v.kind), ..v }))
                }
            },
            ExprKind::Call(name, args) => self.elem_call(name, args, span, out),
            ExprKind::Transpose(_) => Err(terr(span, "transpose is not supported inside comprehensions")),
            ExprKind::Comprehension { .. } => Err(terr(span, "comprehensions may only nest as the whole element")),
            ExprKind::Str(_) | ExprKind::TypeLit(..) => Err(terr(span, "unsupported expression in comprehension")),
        }
    }

    fn elem_index(&mut self, base: &ast::Expr, idx: &[Index], span: Span, out: &mut Vec<Stmt>) -> Result<EVal> {
        let ExprKind::Ident(name) = &base.kind else {
            return Err(terr(span, "only named arrays can be indexed"));
        };
        let Val::Array(a) = self.ident(name, base.span)? else {
            return Err(terr(span, format!("`{name}` is not an array")));
        };
        let t = self.array_ty(&a);
        if idx.len() != t.ndims() {
            return Err(terr(span, format!("`{name}` has {} dims but is indexed with {}", t.ndims(), idx.len())));
        }
        let mut scal: Vec<Option<Expr>> = Vec::new();
        let mut vec_pos: Option<(usize, Option<View>)> = None;
        for (k, i) in idx.iter().enumerate() {
            match i {
                Index::All => {
                    if vec_pos.is_some() {
                        return Err(terr(span, "at most one vector index is supported"));
                    }
                    vec_pos = Some((k, None));
                    scal.push(None);
                }
                Index::Expr(x) => match self.elem(x, out)? {
                    EVal::S(s, sk) => {
                        if sk == ScalarKind::F64 {
                            return Err(terr(x.span, "array indices must be integers"));
                        }
                        scal.push(Some(s));
                    }
                    EVal::V(v) => {
                        if v.kind != ScalarKind::Bool || v.mask.is_some() {
                            return Err(terr(x.span, "vector indices must be boolean masks"));
                        }
                        if vec_pos.is_some() {
                            return Err(terr(span, "at most one vector index is supported"));
                        }
                        vec_pos = Some((k, Some(v)));
                        scal.push(None);
                    }
                },
            }
        }
        match vec_pos {
            None => Ok(EVal::S(Expr::read(a, scal.into_iter().map(Option::unwrap).collect()), t.elem)),
            Some((k, mask)) => {
                let len = self.canon(&t.dims[k]);
                let (var, mask) = match mask {
                    Some(m) => {
                        self.unify(&len, &m.len, span, "mask length mismatch")?;
                        (m.var, Some(m.elem))
                    }
                    None => (self.fresh_view_var(), None),
                };
                let index = scal.into_iter().map(|s| s.unwrap_or_else(|| Expr::Var(var.clone()))).collect();
                Ok(EVal::V(View { var, len, elem: Expr::read(a, index), kind: t.elem, mask }))
            }
        }
    }

    fn elem_call(&mut self, name: &str, args: &[ast::Expr], span: Span, out: &mut Vec<Stmt>) -> Result<EVal> {
        if let Some(op) = is_float_fn(name) {
            if args.len() != 1 {
                return Err(terr(span, format!("`{name}` takes 1 argument")));
            }
            return match self.elem(&args[0], out)? {
                EVal::S(x, k) => Ok(EVal::S(Expr::un(op, x), un_kind(op, k))),
                EVal::V(v) => Ok(EVal::V(View { elem: Expr::un(op, v.elem.clone()), kind: un_kind(op, v.kind), ..v })),
            };
        }
        if let Some(op) = reduce_fn(name) {
            if args.len() != 1 {
                return Err(terr(span, format!("`{name}` takes 1 argument")));
            }
            let EVal::V(v) = self.elem(&args[0], out)? else {
                return Err(terr(span, format!("`{name}` expects a vector")));
            };
            let k = reduce_kind(op, v.kind);
            let acc = self.fresh("acc", Type::Scalar(k));
            let term = match v.mask {
                Some(m) => Expr::select(m, v.elem, Expr::f64(op.identity())),
                None => v.elem,
            };
            out.push(Stmt::new(StmtKind::Assign { lhs: acc.clone(), rhs: Expr::f64(op.identity()) }, span));
            let upd = Stmt::new(
                StmtKind::Assign { lhs: acc.clone(), rhs: Expr::bin(op.as_binop(), Expr::Var(acc.clone()), term) },
                span,
            );
            out.push(Stmt::new(
                StmtKind::For { var: v.var, lo: Expr::i64(1), hi: v.len.to_expr(), body: vec![upd] },
                span,
            ));
            return Ok(EVal::S(Expr::Var(acc), k));
        }
        match name {
            "indmin" | "argmin" => {
                if args.len() != 1 {
                    return Err(terr(span, "indmin takes 1 argument"));
                }
                let EVal::V(v) = self.elem(&args[0], out)? else {
                    return Err(terr(span, "indmin expects a vector"));
                };
                if v.mask.is_some() {
                    return Err(terr(span, "indmin of a masked vector is not supported"));
                }
                let best = self.fresh("best", Type::Scalar(ScalarKind::F64));
                let arg = self.fresh("arg", Type::Scalar(ScalarKind::I64));
                out.push(Stmt::new(StmtKind::Assign { lhs: best.clone(), rhs: Expr::f64(f64::INFINITY) }, span));
                out.push(Stmt::new(StmtKind::Assign { lhs: arg.clone(), rhs: Expr::i64(0) }, span));
                let better = Expr::bin(BinOp::Lt, v.elem.clone(), Expr::Var(best.clone()));
                let body = vec![
                    Stmt::new(
                        StmtKind::Assign {
                            lhs: arg.clone(),
                            rhs: Expr::select(better.clone(), Expr::Var(v.var.clone()), Expr::Var(arg.clone())),
                        },
                        span,
                    ),
                    Stmt::new(
                        StmtKind::Assign {
                            lhs: best.clone(),
                            rhs: Expr::select(better, v.elem.clone(), Expr::Var(best.clone())),
                        },
                        span,
                    ),
                ];
                out.push(Stmt::new(StmtKind::For { var: v.var, lo: Expr::i64(1), hi: v.len.to_expr(), body }, span));
                Ok(EVal::S(Expr::Var(arg), ScalarKind::I64))
            }
            "min" | "max" => {
                if args.len() != 2 {
                    return Err(terr(span, format!("`{name}` takes 2 arguments")));
                }
                let op = if name == "min" { BinOp::Min } else { BinOp::Max };
                match (self.elem(&args[0], out)?, self.elem(&args[1], out)?) {
                    (EVal::S(a, ka), EVal::S(b, kb)) => Ok(EVal::S(Expr::bin(op, a, b), ka.join(kb))),
                    _ => Err(terr(span, format!("`{name}` takes scalars; use minimum/maximum for vectors"))),
                }
            }
            "size" | "length" => {
                match self.value(&ast::Expr::new(ExprKind::Call(name.into(), args.to_vec()), span), Dest::None, out)? {
                    Val::Scalar(x, k) => Ok(EVal::S(x, k)),
                    _ => Err(terr(span, "size(A) must be destructured")),
                }
            }
            _ => Err(terr(span, format!("`{name}` cannot be called inside a comprehension"))),
        }
    }
}

/// `DataSource(T, HDF5, "name", file)` accepts (and ignores) a storage
/// format between the type and the dataset name.
fn strip_format(args: &[ast::Expr]) -> Vec<ast::Expr> {
    let mut a = args.to_vec();
    if a.len() == 4 && matches!(a[1].kind, ExprKind::Ident(_)) {
        a.remove(1);
    }
    a
}

fn scan_file_args(stmts: &[ast::Stmt], acc: &mut BTreeSet<String>) {
    fn expr(e: &ast::Expr, acc: &mut BTreeSet<String>) {
        match &e.kind {
            ExprKind::Call(name, args) => {
                if name == "DataSource" || name == "DataSink" {
                    if let Some(ast::Expr { kind: ExprKind::Ident(p), .. }) = strip_format(args).get(2) {
                        acc.insert(p.clone());
                    }
                }
                args.iter().for_each(|a| expr(a, acc));
            }
            ExprKind::Binary(_, a, b) => {
                expr(a, acc);
                expr(b, acc);
            }
            ExprKind::Unary(_, a) | ExprKind::Transpose(a) => expr(a, acc),
            _ => {}
        }
    }
    for s in stmts {
        match &s.kind {
            ast::StmtKind::Assign { value, .. } => expr(value, acc),
            ast::StmtKind::For { body, .. } => scan_file_args(body, acc),
            ast::StmtKind::Expr(e) => expr(e, acc),
            _ => {}
        }
    }
}
