//! Typed intermediate representation shared by every pass.
//!
//! Arrays are column-major and the *last* dimension is the one that gets
//! block-partitioned across ranks. A [`Parfor`] stores its loop nest
//! innermost-first, so `loops.last()` is the partitionable loop.

mod dist;
pub mod text;
mod validate;
pub mod visit;

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

pub use dist::Distribution;
pub use validate::{validate, Violation};

/// Variable names. Compiler-generated names contain `#`, which the surface
/// language cannot spell.
pub type Var = String;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl Span {
    pub fn new(line: u32, col: u32) -> Self {
        Span { line, col }
    }
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct ParforId(pub u32);

impl fmt::Display for ParforId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "parfor#{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ScalarKind {
    F64,
    I64,
    Bool,
}

impl ScalarKind {
    pub fn name(self) -> &'static str {
        match self {
            ScalarKind::F64 => "f64",
            ScalarKind::I64 => "i64",
            ScalarKind::Bool => "bool",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "f64" | "Float64" => Some(ScalarKind::F64),
            "i64" | "Int64" | "Int" => Some(ScalarKind::I64),
            "bool" | "Bool" => Some(ScalarKind::Bool),
            _ => None,
        }
    }

    /// Result kind of an arithmetic combination.
    pub fn join(self, other: ScalarKind) -> ScalarKind {
        match (self, other) {
            (ScalarKind::F64, _) | (_, ScalarKind::F64) => ScalarKind::F64,
            _ => ScalarKind::I64,
        }
    }
}

/// An array extent: a literal or the name of an integer scalar.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Extent {
    Const(i64),
    Sym(Var),
}

impl Extent {
    pub fn to_expr(&self) -> Expr {
        match self {
            Extent::Const(c) => Expr::Lit(Lit::I64(*c)),
            Extent::Sym(v) => Expr::Var(v.clone()),
        }
    }

    pub fn from_expr(e: &Expr) -> Option<Extent> {
        match e {
            Expr::Lit(Lit::I64(c)) => Some(Extent::Const(*c)),
            Expr::Var(v) => Some(Extent::Sym(v.clone())),
            _ => None,
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, Extent::Const(1))
    }
}

impl fmt::Display for Extent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Extent::Const(c) => write!(f, "{c}"),
            Extent::Sym(s) => f.write_str(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ArrayType {
    pub elem: ScalarKind,
    pub dims: Vec<Extent>,
}

impl ArrayType {
    pub fn new(elem: ScalarKind, dims: Vec<Extent>) -> Self {
        ArrayType { elem, dims }
    }

    pub fn ndims(&self) -> usize {
        self.dims.len()
    }

    pub fn last_dim(&self) -> &Extent {
        self.dims.last().expect("arrays have at least one dimension")
    }
}

impl fmt::Display for ArrayType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[", self.elem.name())?;
        for (k, d) in self.dims.iter().enumerate() {
            if k > 0 {
                f.write_str(",")?;
            }
            write!(f, "{d}")?;
        }
        f.write_str("]")
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Type {
    Scalar(ScalarKind),
    Array(ArrayType),
    Str,
}

impl Type {
    pub fn as_array(&self) -> Option<&ArrayType> {
        match self {
            Type::Array(a) => Some(a),
            _ => None,
        }
    }

    pub fn is_array(&self) -> bool {
        matches!(self, Type::Array(_))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Scalar(k) => f.write_str(k.name()),
            Type::Array(a) => write!(f, "{a}"),
            Type::Str => f.write_str("str"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Min,
    Max,
}

impl BinOp {
    pub const ALL: [BinOp; 13] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::Div,
        BinOp::Pow,
        BinOp::Eq,
        BinOp::Ne,
        BinOp::Lt,
        BinOp::Le,
        BinOp::Gt,
        BinOp::Ge,
        BinOp::Min,
        BinOp::Max,
    ];

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Min => "min",
            BinOp::Max => "max",
        }
    }

    pub fn from_symbol(s: &str) -> Option<BinOp> {
        BinOp::ALL.iter().copied().find(|op| op.symbol() == s)
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        let t = |c: bool| if c { 1.0 } else { 0.0 };
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => {
                if b == 2.0 {
                    a * a
                } else {
                    a.powf(b)
                }
            }
            BinOp::Eq => t(a == b),
            BinOp::Ne => t(a != b),
            BinOp::Lt => t(a < b),
            BinOp::Le => t(a <= b),
            BinOp::Gt => t(a > b),
            BinOp::Ge => t(a >= b),
            BinOp::Min => a.min(b),
            BinOp::Max => a.max(b),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum UnOp {
    Neg,
    Not,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl UnOp {
    pub const ALL: [UnOp; 6] = [UnOp::Neg, UnOp::Not, UnOp::Exp, UnOp::Log, UnOp::Sqrt, UnOp::Abs];

    pub fn name(self) -> &'static str {
        match self {
            UnOp::Neg => "neg",
            UnOp::Not => "not",
            UnOp::Exp => "exp",
            UnOp::Log => "log",
            UnOp::Sqrt => "sqrt",
            UnOp::Abs => "abs",
        }
    }

    pub fn from_name(s: &str) -> Option<UnOp> {
        UnOp::ALL.iter().copied().find(|op| op.name() == s)
    }

    pub fn apply(self, a: f64) -> f64 {
        match self {
            UnOp::Neg => -a,
            UnOp::Not => {
                if a == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnOp::Exp => a.exp(),
            UnOp::Log => a.ln(),
            UnOp::Sqrt => a.sqrt(),
            UnOp::Abs => a.abs(),
        }
    }
}

/// Reduction combine functions. The set is closed on purpose; see the
/// README for the rationale.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ReduceOp {
    Sum,
    Prod,
    Min,
    Max,
}

impl ReduceOp {
    pub const ALL: [ReduceOp; 4] = [ReduceOp::Sum, ReduceOp::Prod, ReduceOp::Min, ReduceOp::Max];

    pub fn identity(self) -> f64 {
        match self {
            ReduceOp::Sum => 0.0,
            ReduceOp::Prod => 1.0,
            ReduceOp::Min => f64::INFINITY,
            ReduceOp::Max => f64::NEG_INFINITY,
        }
    }

    pub fn combine(self, acc: f64, x: f64) -> f64 {
        match self {
            ReduceOp::Sum => acc + x,
            ReduceOp::Prod => acc * x,
            ReduceOp::Min => acc.min(x),
            ReduceOp::Max => acc.max(x),
        }
    }

    /// The scalar operator that expresses `acc = acc <op> x`.
    pub fn as_binop(self) -> BinOp {
        match self {
            ReduceOp::Sum => BinOp::Add,
            ReduceOp::Prod => BinOp::Mul,
            ReduceOp::Min => BinOp::Min,
            ReduceOp::Max => BinOp::Max,
        }
    }

    pub fn from_binop(op: BinOp) -> Option<ReduceOp> {
        match op {
            BinOp::Add => Some(ReduceOp::Sum),
            BinOp::Mul => Some(ReduceOp::Prod),
            BinOp::Min => Some(ReduceOp::Min),
            BinOp::Max => Some(ReduceOp::Max),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ReduceOp::Sum => "sum",
            ReduceOp::Prod => "prod",
            ReduceOp::Min => "min",
            ReduceOp::Max => "max",
        }
    }

    pub fn from_name(s: &str) -> Option<ReduceOp> {
        ReduceOp::ALL.iter().copied().find(|op| op.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Lit {
    F64(f64),
    I64(i64),
    Bool(bool),
    Str(String),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Expr {
    Lit(Lit),
    Var(Var),
    Read {
        array: Var,
        index: Vec<Expr>,
    },
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Un(UnOp, Box<Expr>),
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
    /// Counter-based uniform draw in `[0, 1)`, keyed by the global
    /// column-major linear index of `index` within `dims`.
    RandAt {
        stream: u32,
        index: Vec<Expr>,
        dims: Vec<Extent>,
    },
}

impl Expr {
    pub fn f64(v: f64) -> Expr {
        Expr::Lit(Lit::F64(v))
    }

    pub fn i64(v: i64) -> Expr {
        Expr::Lit(Lit::I64(v))
    }

    pub fn var(v: impl Into<Var>) -> Expr {
        Expr::Var(v.into())
    }

    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Bin(op, Box::new(a), Box::new(b))
    }

    pub fn un(op: UnOp, a: Expr) -> Expr {
        Expr::Un(op, Box::new(a))
    }

    pub fn read(array: impl Into<Var>, index: Vec<Expr>) -> Expr {
        Expr::Read { array: array.into(), index }
    }

    pub fn select(c: Expr, a: Expr, b: Expr) -> Expr {
        Expr::Select(Box::new(c), Box::new(a), Box::new(b))
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Expr::Var(v) => Some(v),
            _ => None,
        }
    }
}

/// Data-parallel semantics identified before lowering.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum PatternTag {
    Map,
    Reduce,
    CartesianMap,
    Gemm,
    Serial,
}

impl PatternTag {
    pub fn name(self) -> &'static str {
        match self {
            PatternTag::Map => "map",
            PatternTag::Reduce => "reduce",
            PatternTag::CartesianMap => "cartesian-map",
            PatternTag::Gemm => "gemm",
            PatternTag::Serial => "serial",
        }
    }

    pub fn from_name(s: &str) -> Option<PatternTag> {
        [PatternTag::Map, PatternTag::Reduce, PatternTag::CartesianMap, PatternTag::Gemm, PatternTag::Serial]
            .into_iter()
            .find(|t| t.name() == s)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum MapOp {
    Bin(BinOp),
    Un(UnOp),
    /// Fill with uniform draws; `stream` identifies the call site.
    Rand {
        stream: u32,
    },
    Fill(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Operand {
    Array(Var),
    Scalar(Expr),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LoopNest {
    pub var: Var,
    pub lo: Expr,
    pub hi: Expr,
}

/// Whole-array operations produced by the frontend and consumed by lowering.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum ArrayOp {
    /// Elementwise: `lhs[k] = op(args[k]...)` with scalar broadcasting.
    Map { op: MapOp, args: Vec<Operand> },
    /// `lhs = fold(op, identity, arg)` in column-major order; lhs is scalar.
    Reduce { op: ReduceOp, arg: Var },
    /// Comprehension over `loops` (innermost first); `body` writes lhs.
    Comprehension { loops: Vec<LoopNest>, body: Vec<Stmt> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Reduction {
    pub var: Var,
    pub op: ReduceOp,
}

impl Reduction {
    pub fn init(&self) -> f64 {
        self.op.identity()
    }
}

/// A tightly nested parallel loop: loop nests, reductions, and a body that
/// computes one point of the iteration space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Parfor {
    pub id: ParforId,
    pub loops: Vec<LoopNest>,
    pub reductions: Vec<Reduction>,
    pub body: Vec<Stmt>,
    pub origin: PatternTag,
}

impl Parfor {
    /// Index variable of the partitionable (outermost) loop.
    pub fn last_var(&self) -> &str {
        &self.loops.last().expect("parfor has at least one loop").var
    }

    pub fn loop_vars(&self) -> impl Iterator<Item = &str> {
        self.loops.iter().map(|l| l.var.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
    pub tag: Option<PatternTag>,
}

impl Stmt {
    pub fn new(kind: StmtKind, span: Span) -> Self {
        Stmt { kind, span, tag: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum StmtKind {
    /// Scalar assignment, or whole-array copy when both sides are arrays.
    Assign {
        lhs: Var,
        rhs: Expr,
    },
    ArrayOp {
        lhs: Var,
        op: ArrayOp,
    },
    ArrayWrite {
        array: Var,
        index: Vec<Expr>,
        value: Expr,
    },
    /// `target[index] = op(target[index], value)`; scalar target when index is empty.
    ReduceUpdate {
        target: Var,
        index: Vec<Expr>,
        op: ReduceOp,
        value: Expr,
    },
    Gemm {
        out: Var,
        x: Var,
        xt: bool,
        y: Var,
        yt: bool,
    },
    Alloc {
        array: Var,
        dims: Vec<Extent>,
    },
    SizeQuery {
        outs: Vec<Var>,
        dataset: String,
        file: Expr,
    },
    DataSource {
        array: Var,
        dataset: String,
        file: Expr,
    },
    DataSink {
        array: Var,
        dataset: String,
        file: Expr,
    },
    Call {
        result: Option<Var>,
        name: String,
        args: Vec<Expr>,
        known: bool,
    },
    For {
        var: Var,
        lo: Expr,
        hi: Expr,
        body: Vec<Stmt>,
    },
    Parfor(Box<Parfor>),
    Return {
        vars: Vec<Var>,
    },
    Partitioned {
        array: Var,
    },

    // Inserted by the checkpoint pass.
    Checkpoint {
        vars: Vec<Var>,
        index_var: Var,
    },
    CheckpointCleanup,
    CheckpointRestore {
        vars: Vec<Var>,
        index_var: Var,
        start_var: Var,
        default_start: Expr,
    },

    // Inserted by the distributed pass.
    Partition {
        extent: Extent,
        start: Var,
        size: Var,
    },
    LocalAlloc {
        array: Var,
        dims: Vec<Extent>,
        local_size: Var,
    },
    BlockRead {
        array: Var,
        dataset: String,
        file: Expr,
        start: Var,
        size: Var,
    },
    BlockWrite {
        array: Var,
        dataset: String,
        file: Expr,
        start: Var,
        size: Var,
    },
    Allreduce {
        var: Var,
        op: ReduceOp,
    },
    Bcast {
        var: Var,
        root: u32,
    },
    OnRoot(Box<Stmt>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Param {
    pub name: Var,
    pub ty: Type,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FunctionIR {
    pub name: String,
    pub params: Vec<Param>,
    pub body: Vec<Stmt>,
    pub symbols: BTreeMap<Var, Type>,
}

impl FunctionIR {
    pub fn ty(&self, v: &str) -> Option<&Type> {
        self.symbols.get(v)
    }

    pub fn array_type(&self, v: &str) -> Option<&ArrayType> {
        self.symbols.get(v).and_then(Type::as_array)
    }

    pub fn is_array(&self, v: &str) -> bool {
        self.array_type(v).is_some()
    }

    /// All array-typed symbols, in name order.
    pub fn arrays(&self) -> impl Iterator<Item = &str> {
        self.symbols.iter().filter(|(_, t)| t.is_array()).map(|(n, _)| n.as_str())
    }

    pub fn return_vars(&self) -> &[Var] {
        for s in self.body.iter().rev() {
            if let StmtKind::Return { vars } = &s.kind {
                return vars;
            }
        }
        &[]
    }

    pub fn parfors(&self) -> Vec<&Parfor> {
        let mut out = Vec::new();
        visit::for_each_stmt(&self.body, &mut |s| {
            if let StmtKind::Parfor(p) = &s.kind {
                out.push(p.as_ref());
            }
        });
        out
    }

    pub fn next_parfor_id(&self) -> u32 {
        self.parfors().iter().map(|p| p.id.0 + 1).max().unwrap_or(1)
    }

    /// A fresh variable name derived from `base` that is not yet in the
    /// symbol table.
    pub fn fresh(&self, base: &str) -> Var {
        let base = base.split('#').next().unwrap_or(base);
        (1..).map(|k| format!("{base}#{k}")).find(|n| !self.symbols.contains_key(n)).expect("unbounded")
    }
}
