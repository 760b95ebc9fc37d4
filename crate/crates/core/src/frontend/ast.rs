use crate::ir::{BinOp, ScalarKind, Span, UnOp};

#[derive(Clone, Debug, PartialEq)]
pub struct Program {
    pub externs: Vec<(String, Span)>,
    pub func: Function,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Function {
    pub name: String,
    pub params: Vec<ParamDecl>,
    pub body: Vec<Stmt>,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamDecl {
    pub name: String,
    pub ty: Option<ParamType>,
    pub span: Span,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamType {
    Scalar(ScalarKind),
    Str,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
            AssignOp::Div => "/=",
        }
    }

    pub fn binop(self) -> Option<BinOp> {
        match self {
            AssignOp::Set => None,
            AssignOp::Add => Some(BinOp::Add),
            AssignOp::Sub => Some(BinOp::Sub),
            AssignOp::Mul => Some(BinOp::Mul),
            AssignOp::Div => Some(BinOp::Div),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    /// `a = e`, `a, b = e` (destructuring), `a op= e`.
    Assign {
        targets: Vec<String>,
        op: AssignOp,
        value: Expr,
    },
    For {
        var: String,
        lo: Expr,
        hi: Expr,
        body: Vec<Stmt>,
    },
    Return(Vec<Expr>),
    /// `partitioned(M, 2D)`
    Partitioned(String),
    Expr(Expr),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContainerKind {
    Vector,
    Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

/// A binary operator as written: `dot` marks the broadcasting spelling
/// (`.*`, `.==`, ...). Undotted `*` between two matrices is a matrix
/// product.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinSym {
    pub op: BinOp,
    pub dot: bool,
}

impl BinSym {
    pub fn text(self) -> String {
        if self.dot {
            format!(".{}", self.op.symbol())
        } else {
            self.op.symbol().to_string()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Index {
    All,
    Expr(Expr),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub var: String,
    pub lo: Expr,
    pub hi: Expr,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ExprKind {
    Int(i64),
    Float(f64),
    Str(String),
    Bool(bool),
    Ident(String),
    Binary(BinSym, Box<Expr>, Box<Expr>),
    Unary(UnOp, Box<Expr>),
    Transpose(Box<Expr>),
    Call(String, Vec<Expr>),
    Index(Box<Expr>, Vec<Index>),
    /// `T[body for v in lo:hi, ...]`; generators listed as written, so the
    /// first one varies fastest.
    Comprehension {
        elem: Option<ScalarKind>,
        body: Box<Expr>,
        gens: Vec<Generator>,
    },
    /// `Matrix{Float64}` in `DataSource` calls.
    TypeLit(ContainerKind, ScalarKind),
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }
}

pub fn scalar_kind_spelling(k: ScalarKind) -> &'static str {
    match k {
        ScalarKind::F64 => "Float64",
        ScalarKind::I64 => "Int64",
        ScalarKind::Bool => "Bool",
    }
}

/// Structural equality ignoring spans.
pub fn strip_spans(p: &mut Program) {
    let z = Span::default();
    for e in &mut p.externs {
        e.1 = z;
    }
    p.func.span = z;
    for prm in &mut p.func.params {
        prm.span = z;
    }
    strip_stmts(&mut p.func.body);
}

fn strip_stmts(ss: &mut [Stmt]) {
    for s in ss {
        s.span = Span::default();
        match &mut s.kind {
            StmtKind::Assign { value, .. } => strip_expr(value),
            StmtKind::For { lo, hi, body, .. } => {
                strip_expr(lo);
                strip_expr(hi);
                strip_stmts(body);
            }
            StmtKind::Return(es) => es.iter_mut().for_each(strip_expr),
            StmtKind::Partitioned(_) => {}
            StmtKind::Expr(e) => strip_expr(e),
        }
    }
}

fn strip_expr(e: &mut Expr) {
    e.span = Span::default();
    match &mut e.kind {
        ExprKind::Binary(_, a, b) => {
            strip_expr(a);
            strip_expr(b);
        }
        ExprKind::Unary(_, a) | ExprKind::Transpose(a) => strip_expr(a),
        ExprKind::Call(_, args) => args.iter_mut().for_each(strip_expr),
        ExprKind::Index(b, idx) => {
            strip_expr(b);
            for i in idx {
                if let Index::Expr(x) = i {
                    strip_expr(x);
                }
            }
        }
        ExprKind::Comprehension { body, gens, .. } => {
            strip_expr(body);
            for g in gens {
                g.span = Span::default();
                strip_expr(&mut g.lo);
                strip_expr(&mut g.hi);
            }
        }
        _ => {}
    }
}
