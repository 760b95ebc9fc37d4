//! Distribution inference: a fixed-point data-flow analysis over the
//! lattice `REP <= 2D_BC <= 1D_B`.
//!
//! Every array and parfor starts at `1D_B` (arrays named by a
//! `partitioned` annotation start at `2D_BC`). Transfer functions only
//! ever meet values downward, so repeated sweeps reach the greatest
//! solution that satisfies every rule within a bounded number of sweeps.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, ErrorKind, Result};
use crate::ir::visit::{array_accesses, expr_vars, for_each_expr, stmt_exprs};
use crate::ir::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum GemmBranch {
    /// `x * y'` with both 1D_B: partial products summed across ranks.
    ReductionAcrossSamples,
    /// `x * y` with y and the result 1D_B: x must be replicated.
    DotWithSampleFeatures,
    TwoD,
    AllReplicated,
}

impl GemmBranch {
    pub fn number(self) -> u8 {
        match self {
            GemmBranch::ReductionAcrossSamples => 1,
            GemmBranch::DotWithSampleFeatures => 2,
            GemmBranch::TwoD => 3,
            GemmBranch::AllReplicated => 4,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            GemmBranch::ReductionAcrossSamples => "GEMM reduction across samples",
            GemmBranch::DotWithSampleFeatures => "GEMM dot product with sample features",
            GemmBranch::TwoD => "GEMM with 2D operands",
            GemmBranch::AllReplicated => "GEMM with no parallel rule (all replicated)",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct GemmKey {
    pub out: Var,
    pub span: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GemmInfo {
    pub branch: GemmBranch,
    pub x: Distribution,
    pub y: Distribution,
    pub out: Distribution,
    pub needs_allreduce: bool,
}

/// Why a rule lowered a value.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum Cause {
    Annotation,
    UnknownCall {
        name: String,
    },
    Returned,
    Gemm {
        branch: GemmBranch,
    },
    Assigned {
        from: Var,
    },
    /// A parfor met an array it accesses along its partitioned loop.
    ParforAccess {
        parfor: ParforId,
        array: Var,
    },
    /// An array accessed along the partitioned loop of a parfor.
    InParfor {
        parfor: ParforId,
    },
    DependentIndex {
        parfor: ParforId,
        array: Var,
    },
    NotTwoD {
        parfor: ParforId,
    },
    ReductionTarget {
        parfor: ParforId,
    },
    SerialAccess,
}

impl Cause {
    /// Rules that force a value on their own, as opposed to propagating
    /// another variable's distribution.
    pub fn is_root(&self) -> bool {
        !matches!(self, Cause::Assigned { .. } | Cause::ParforAccess { .. } | Cause::InParfor { .. })
    }
}

impl fmt::Display for Cause {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cause::Annotation => f.write_str("partitioned annotation"),
            Cause::UnknownCall { name } => write!(f, "unknown call {name}"),
            Cause::Returned => f.write_str("returned from entry function"),
            Cause::Gemm { branch } => f.write_str(branch.describe()),
            Cause::Assigned { from } => write!(f, "same distribution as {from}"),
            Cause::ParforAccess { array, .. } => write!(f, "accesses {array} along its partitioned loop"),
            Cause::InParfor { parfor } => write!(f, "accessed along the partitioned loop of {parfor}"),
            Cause::DependentIndex { parfor, array } => {
                write!(f, "{parfor} indexes {array} with its partitioned loop variable outside the last dimension")
            }
            Cause::NotTwoD { parfor } => write!(f, "{parfor} does not access its arrays in a 2D pattern"),
            Cause::ReductionTarget { parfor } => write!(f, "array reduction target of {parfor}"),
            Cause::SerialAccess => f.write_str("element access outside a parfor"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Provenance {
    /// Array name, or `parfor#k`.
    pub var: String,
    pub to: Distribution,
    pub cause: Cause,
    pub span: Span,
}

/// One downward step of one entry; the sequence is the monotonicity
/// witness of a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Change {
    pub sweep: usize,
    pub var: String,
    pub from: Distribution,
    pub to: Distribution,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DistEnv {
    pub arrays: BTreeMap<Var, Distribution>,
    pub parfors: BTreeMap<ParforId, Distribution>,
    #[serde(serialize_with = "ser_gemm")]
    pub gemm_info: BTreeMap<GemmKey, GemmInfo>,
    pub provenance: Vec<Provenance>,
    pub sweeps: usize,
    pub changes: Vec<Change>,
    #[serde(skip)]
    changed: bool,
}

fn ser_gemm<S: serde::Serializer>(m: &BTreeMap<GemmKey, GemmInfo>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.len()))?;
    for (k, v) in m {
        #[derive(Serialize)]
        struct Row<'a> {
            out: &'a str,
            span: Span,
            #[serde(flatten)]
            info: &'a GemmInfo,
        }
        seq.serialize_element(&Row { out: &k.out, span: k.span, info: v })?;
    }
    seq.end()
}

impl DistEnv {
    /// Every array of `f` at `1D_B`.
    pub fn top(f: &FunctionIR) -> Self {
        DistEnv { arrays: f.arrays().map(|a| (a.to_string(), Distribution::TOP)).collect(), ..Default::default() }
    }

    pub fn array(&self, v: &str) -> Distribution {
        self.arrays.get(v).copied().unwrap_or(Distribution::TOP)
    }

    pub fn parfor(&self, id: ParforId) -> Distribution {
        self.parfors.get(&id).copied().unwrap_or(Distribution::TOP)
    }

    pub fn is_array(&self, v: &str) -> bool {
        self.arrays.contains_key(v)
    }

    fn note(&mut self, var: String, old: Distribution, new: Distribution, cause: &Cause, span: Span) {
        if new < old {
            self.changed = true;
            self.changes.push(Change { sweep: self.sweeps, var: var.clone(), from: old, to: new });
        }
        let record = new.is_rep() && (new < old || cause.is_root());
        if record && !self.provenance.iter().any(|p| p.var == var && &p.cause == cause) {
            self.provenance.push(Provenance { var, to: new, cause: cause.clone(), span });
        }
    }

    /// Meet an array with `d`.
    pub fn lower_array(&mut self, v: &str, d: Distribution, cause: Cause, span: Span) {
        let Some(old) = self.arrays.get(v).copied() else { return };
        let new = old.meet(d);
        self.arrays.insert(v.to_string(), new);
        if new < old || (d.is_rep() && cause.is_root()) {
            self.note(v.to_string(), old, new, &cause, span);
        }
    }

    pub fn lower_parfor(&mut self, id: ParforId, d: Distribution, cause: Cause, span: Span) {
        let old = self.parfor(id);
        let new = old.meet(d);
        self.parfors.insert(id, new);
        if new < old || (d.is_rep() && cause.is_root()) {
            self.note(id.to_string(), old, new, &cause, span);
        }
    }

    /// Attach an extra cause to a variable that is already REP.
    pub fn record(&mut self, var: &str, cause: Cause, span: Span) {
        let rep = match var.strip_prefix("parfor#") {
            Some(n) => n.parse().ok().is_some_and(|k| self.parfor(ParforId(k)).is_rep()),
            None => self.array(var).is_rep(),
        };
        if rep && !self.provenance.iter().any(|p| p.var == var && p.cause == cause) {
            self.provenance.push(Provenance { var: var.to_string(), to: Distribution::BOTTOM, cause, span });
        }
    }

    /// Causes recorded for a variable, first (primary) cause first.
    pub fn causes(&self, var: &str) -> Vec<&Provenance> {
        self.provenance.iter().filter(|p| p.var == var).collect()
    }

    pub fn primary_cause(&self, var: &str) -> Option<&Provenance> {
        self.provenance.iter().find(|p| p.var == var)
    }

    pub fn gemm(&self, out: &str, span: Span) -> Option<&GemmInfo> {
        self.gemm_info.get(&GemmKey { out: out.to_string(), span })
    }

    /// True when `self` is pointwise at or below `other`.
    pub fn le(&self, other: &DistEnv) -> bool {
        self.arrays.iter().all(|(k, v)| *v <= other.array(k))
            && self.parfors.iter().all(|(k, v)| *v <= other.parfor(*k))
    }
}

/// How a known call constrains its arguments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CallRule {
    /// The result and every array argument share one distribution.
    Preserve,
    /// No array is constrained (scalar results, I/O placeholders).
    NoConstraint,
}

#[derive(Clone, Debug)]
pub struct KnownCallTable {
    rules: BTreeMap<String, CallRule>,
}

impl Default for KnownCallTable {
    fn default() -> Self {
        let mut rules = BTreeMap::new();
        rules.insert("reshape".into(), CallRule::Preserve);
        for n in ["size", "length", "rand", "zeros", "ones", "DataSource", "DataSink", "indmin"] {
            rules.insert(n.into(), CallRule::NoConstraint);
        }
        KnownCallTable { rules }
    }
}

impl KnownCallTable {
    pub fn get(&self, name: &str) -> Option<CallRule> {
        self.rules.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.rules.keys().map(String::as_str)
    }
}

/// `l` and `r` end with the same distribution, their meet.
pub fn transfer_assignment(env: &mut DistEnv, l: &str, r: &str, span: Span) {
    let (dl, dr) = (env.array(l), env.array(r));
    let m = dl.meet(dr);
    env.lower_array(l, m, Cause::Assigned { from: r.to_string() }, span);
    env.lower_array(r, m, Cause::Assigned { from: l.to_string() }, span);
    if dr.is_rep() && l != r {
        env.record(l, Cause::Assigned { from: r.to_string() }, span);
    }
    if dl.is_rep() && l != r {
        env.record(r, Cause::Assigned { from: l.to_string() }, span);
    }
}

/// Known calls apply their table rule; unknown calls force every array
/// argument to REP.
pub fn transfer_call(
    env: &mut DistEnv,
    table: &KnownCallTable,
    name: &str,
    known: bool,
    array_args: &[Var],
    result: Option<&str>,
    span: Span,
) {
    let rule = if known { table.get(name) } else { None };
    match rule {
        Some(CallRule::NoConstraint) => {}
        Some(CallRule::Preserve) => {
            let mut all: Vec<&str> = array_args.iter().map(String::as_str).collect();
            if let Some(r) = result.filter(|r| env.is_array(r)) {
                all.push(r);
            }
            for w in all.windows(2) {
                transfer_assignment(env, w[0], w[1], span);
            }
            if all.len() > 2 {
                transfer_assignment(env, all[0], all[all.len() - 1], span);
            }
        }
        None => {
            for a in array_args {
                env.lower_array(a, Distribution::BOTTOM, Cause::UnknownCall { name: name.to_string() }, span);
            }
        }
    }
}

/// Returned arrays must fit on one node.
pub fn transfer_return(env: &mut DistEnv, vars: &[Var], span: Span) {
    for v in vars {
        env.lower_array(v, Distribution::BOTTOM, Cause::Returned, span);
    }
}

/// The four-way case split for `lhs = op(x) * op(y)`, tried in order.
pub fn transfer_gemm(env: &mut DistEnv, lhs: &str, x: &str, xt: bool, y: &str, yt: bool, span: Span) -> GemmBranch {
    let (dx, dy, dl) = (env.array(x), env.array(y), env.array(lhs));
    let branch = if dx.is_1d() && dy.is_1d() && !xt && yt {
        env.lower_array(lhs, Distribution::BOTTOM, Cause::Gemm { branch: GemmBranch::ReductionAcrossSamples }, span);
        GemmBranch::ReductionAcrossSamples
    } else if !dx.is_2d() && dy.is_1d() && !yt && dl.is_1d() {
        env.lower_array(x, Distribution::BOTTOM, Cause::Gemm { branch: GemmBranch::DotWithSampleFeatures }, span);
        GemmBranch::DotWithSampleFeatures
    } else if !dx.is_rep() && !dy.is_rep() && !dl.is_rep() && (dx.is_2d() || dy.is_2d() || dl.is_2d()) {
        for a in [x, y, lhs] {
            env.lower_array(a, Distribution::TwoDBlockCyclic, Cause::Gemm { branch: GemmBranch::TwoD }, span);
        }
        GemmBranch::TwoD
    } else {
        for a in [x, y, lhs] {
            env.lower_array(a, Distribution::BOTTOM, Cause::Gemm { branch: GemmBranch::AllReplicated }, span);
        }
        GemmBranch::AllReplicated
    };
    let info = GemmInfo {
        branch,
        x: env.array(x),
        y: env.array(y),
        out: env.array(lhs),
        needs_allreduce: branch == GemmBranch::ReductionAcrossSamples,
    };
    env.gemm_info.insert(GemmKey { out: lhs.to_string(), span }, info);
    branch
}

/// Scalars inside `body` that are plain copies of `var` (including
/// `var`), and every scalar whose value depends on `var` through
/// assignments in the body.
pub fn index_aliases(body: &[Stmt], var: &str) -> (BTreeSet<Var>, BTreeSet<Var>) {
    let mut assigns = Vec::new();
    visit::for_each_stmt(body, &mut |s| {
        if let StmtKind::Assign { lhs, rhs } = &s.kind {
            assigns.push((lhs.clone(), rhs.clone()));
        }
    });
    let mut copies: BTreeSet<Var> = [var.to_string()].into();
    let mut dependent = copies.clone();
    loop {
        let mut grew = false;
        for (l, r) in &assigns {
            if matches!(r, Expr::Var(v) if copies.contains(v)) && copies.insert(l.clone()) {
                grew = true;
            }
            if !dependent.contains(l) && expr_vars(r).iter().any(|v| dependent.contains(v)) {
                dependent.insert(l.clone());
                grew = true;
            }
        }
        if !grew {
            break;
        }
    }
    (copies, dependent)
}

fn mentions(e: &Expr, vars: &BTreeSet<Var>) -> bool {
    let mut hit = false;
    for_each_expr(e, &mut |x| {
        if let Expr::Var(v) = x {
            hit |= vars.contains(v);
        }
    });
    hit
}

/// The parfor rule: meet the parfor with every array it accesses along
/// its partitioned loop, force REP on dependent indexing, then write the
/// result back to those arrays.
pub fn transfer_parfor(env: &mut DistEnv, p: &Parfor, span: Span) {
    let last = p.last_var();
    let second = (p.loops.len() >= 2).then(|| p.loops[p.loops.len() - 2].var.as_str());
    let (copies, dependent) = index_aliases(&p.body, last);
    let is_copy = |e: &Expr| matches!(e, Expr::Var(v) if copies.contains(v));

    let mut dist = env.parfor(p.id);
    let mut cause = None;
    let mut mine: Vec<(Var, bool)> = Vec::new();
    let mut forced = None;
    for a in array_accesses(&p.body) {
        if !env.is_array(&a.array) || a.index.is_empty() {
            continue;
        }
        let n = a.index.len();
        let last_ok = is_copy(&a.index[n - 1]);
        let elsewhere = a.index[..n - 1].iter().any(|e| mentions(e, &dependent))
            || (!last_ok && mentions(&a.index[n - 1], &dependent));
        if elsewhere {
            let c = Cause::DependentIndex { parfor: p.id, array: a.array.clone() };
            env.lower_array(&a.array, Distribution::BOTTOM, c.clone(), span);
            forced.get_or_insert(c);
            continue;
        }
        if last_ok {
            let two = n >= 2 && second.is_some_and(|s| matches!(&a.index[n - 2], Expr::Var(v) if v == s));
            let d = env.array(&a.array);
            if d < dist {
                dist = d;
                cause = Some(Cause::ParforAccess { parfor: p.id, array: a.array.clone() });
            }
            if !mine.iter().any(|(m, t)| m == &a.array && *t == two) {
                mine.push((a.array.clone(), two));
            }
        }
    }
    for r in &p.reductions {
        if env.is_array(&r.var) {
            env.lower_array(&r.var, Distribution::BOTTOM, Cause::ReductionTarget { parfor: p.id }, span);
        }
    }
    if let Some(c) = forced {
        env.lower_parfor(p.id, Distribution::BOTTOM, c, span);
        dist = Distribution::BOTTOM;
    } else {
        if let Some(c) = cause {
            env.lower_parfor(p.id, dist, c, span);
        }
        if dist.is_2d() && (second.is_none() || mine.iter().any(|(_, two)| !two)) {
            env.lower_parfor(p.id, Distribution::BOTTOM, Cause::NotTwoD { parfor: p.id }, span);
            dist = Distribution::BOTTOM;
        }
    }
    env.parfors.entry(p.id).or_insert(dist);
    let dist = env.parfor(p.id);
    let name = p.id.to_string();
    if dist.is_rep() {
        for (a, _) in &mine {
            if env.array(a).is_rep() {
                env.record(&name, Cause::ParforAccess { parfor: p.id, array: a.clone() }, span);
            }
        }
    }
    for (a, _) in mine {
        env.lower_array(&a, dist, Cause::InParfor { parfor: p.id }, span);
        if dist.is_rep() {
            env.record(&a, Cause::InParfor { parfor: p.id }, span);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SweepOrder {
    #[default]
    Forward,
    Reverse,
}

#[derive(Clone, Debug, Default)]
pub struct Options {
    pub order: SweepOrder,
    pub table: KnownCallTable,
}

/// Analyze `f` from the top of the lattice.
pub fn analyze(f: &FunctionIR) -> Result<DistEnv> {
    analyze_with(f, None, &Options::default())
}

/// Analyze `f`, optionally starting from an earlier result: arrays keep
/// the earlier value (constraints found before a rewrite persist) and
/// its provenance is carried over.
pub fn analyze_with(f: &FunctionIR, seed: Option<&DistEnv>, opts: &Options) -> Result<DistEnv> {
    let mut comprehension = None;
    visit::for_each_stmt(&f.body, &mut |s| {
        if matches!(s.kind, StmtKind::ArrayOp { op: ArrayOp::Comprehension { .. }, .. }) {
            comprehension.get_or_insert(s.span);
        }
    });
    if let Some(sp) = comprehension {
        return Err(Error::at(ErrorKind::Lowering, sp, "distribution analysis needs lowered IR (comprehension found)"));
    }
    let mut env = DistEnv::top(f);
    if let Some(s) = seed {
        for (a, d) in env.arrays.iter_mut() {
            *d = s.array(a);
        }
        env.provenance = s.provenance.iter().filter(|p| f.is_array(&p.var)).cloned().collect();
    }
    for p in f.parfors() {
        env.parfors.insert(p.id, Distribution::TOP);
    }
    visit::for_each_stmt(&f.body, &mut |s| {
        if let StmtKind::Partitioned { array } = &s.kind {
            env.lower_array(array, Distribution::TwoDBlockCyclic, Cause::Annotation, s.span);
        }
    });
    let bound = 2 * (env.arrays.len() + env.parfors.len()) + 1;
    loop {
        env.changed = false;
        env.sweeps += 1;
        sweep(&mut env, f, &f.body, opts);
        if !env.changed {
            break;
        }
        if env.sweeps >= bound {
            return Err(Error::new(
                ErrorKind::NonConvergence,
                None,
                format!("distribution analysis did not converge within {bound} sweeps"),
            ));
        }
    }
    Ok(env)
}

/// Apply every transfer function once, in `opts.order`. Returns whether
/// anything changed.
pub fn sweep_once(env: &mut DistEnv, f: &FunctionIR, opts: &Options) -> bool {
    env.changed = false;
    sweep(env, f, &f.body, opts);
    env.changed
}

fn sweep(env: &mut DistEnv, f: &FunctionIR, stmts: &[Stmt], opts: &Options) {
    let order: Box<dyn Iterator<Item = &Stmt>> = match opts.order {
        SweepOrder::Forward => Box::new(stmts.iter()),
        SweepOrder::Reverse => Box::new(stmts.iter().rev()),
    };
    for s in order {
        transfer_stmt(env, f, s, opts);
    }
}

/// The transfer function of one statement (loops recurse; control flow
/// is otherwise ignored).
pub fn transfer_stmt(env: &mut DistEnv, f: &FunctionIR, s: &Stmt, opts: &Options) {
    let sp = s.span;
    match &s.kind {
        StmtKind::Assign { lhs, rhs: Expr::Var(r) } if env.is_array(lhs) && env.is_array(r) => {
            transfer_assignment(env, lhs, r, sp);
        }
        StmtKind::ArrayOp { lhs, op: ArrayOp::Map { args, .. } } => {
            for a in args {
                if let Operand::Array(r) = a {
                    transfer_assignment(env, lhs, r, sp);
                }
            }
        }
        StmtKind::Gemm { out, x, xt, y, yt } => {
            transfer_gemm(env, out, x, *xt, y, *yt, sp);
        }
        StmtKind::Call { result, name, args, known } => {
            let arrays: Vec<Var> =
                args.iter().filter_map(|a| a.as_var()).filter(|v| env.is_array(v)).map(str::to_string).collect();
            transfer_call(env, &opts.table, name, *known, &arrays, result.as_deref(), sp);
        }
        StmtKind::Return { vars } => transfer_return(env, vars, sp),
        StmtKind::For { body, .. } => sweep(env, f, body, opts),
        StmtKind::Parfor(p) => transfer_parfor(env, p, sp),
        StmtKind::OnRoot(inner) => transfer_stmt(env, f, inner, opts),
        _ => {}
    }
    // Element accesses in serial code need the whole array.
    if !matches!(s.kind, StmtKind::Parfor(_) | StmtKind::For { .. }) {
        let mut hit = Vec::new();
        match &s.kind {
            StmtKind::ArrayWrite { array, .. } => hit.push(array.clone()),
            StmtKind::ReduceUpdate { target, index, .. } if !index.is_empty() => hit.push(target.clone()),
            _ => {}
        }
        for e in stmt_exprs(s) {
            for_each_expr(e, &mut |x| {
                if let Expr::Read { array, .. } = x {
                    hit.push(array.clone());
                }
            });
        }
        for a in hit {
            env.lower_array(&a, Distribution::BOTTOM, Cause::SerialAccess, sp);
        }
    }
    if let StmtKind::For { lo, hi, .. } = &s.kind {
        for e in [lo, hi] {
            for_each_expr(e, &mut |x| {
                if let Expr::Read { array, .. } = x {
                    env.lower_array(array, Distribution::BOTTOM, Cause::SerialAccess, sp);
                }
            });
        }
    }
}

/// `name  distribution  cause` for every array and parfor.
pub fn dump_table(env: &DistEnv) -> String {
    let mut rows: Vec<(String, String, String)> = Vec::new();
    let cause_of =
        |v: &str| env.primary_cause(v).map(|p| format!("{} at {}", p.cause, p.span)).unwrap_or_else(|| "-".into());
    for (a, d) in &env.arrays {
        rows.push((a.clone(), d.to_string(), cause_of(a)));
    }
    for (p, d) in &env.parfors {
        rows.push((p.to_string(), d.to_string(), cause_of(&p.to_string())));
    }
    let w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(4);
    let mut out = String::new();
    for (n, d, c) in rows {
        out.push_str(&format!("{n:<w$}  {d:<5}  {c}\n"));
    }
    out
}

/// Human-readable reason for `var`'s distribution.
pub fn explain(env: &DistEnv, var: &str) -> Result<String> {
    let d = if let Some(d) = env.arrays.get(var) {
        *d
    } else if let Some(d) = env.parfors.iter().find(|(k, _)| k.to_string() == var).map(|(_, d)| *d) {
        d
    } else {
        return Err(Error::new(ErrorKind::UnknownVariable, None, format!("unknown variable `{var}`")));
    };
    Ok(match d {
        Distribution::OneDBlock => format!("{var}: 1D_B (maximally parallel)\n"),
        Distribution::TwoDBlockCyclic => {
            format!("{var}: 2D_BC (block-cyclic over the last two dimensions)\n")
        }
        Distribution::Replicated => {
            let mut s = format!("{var}: REP\n");
            let mut seen = BTreeSet::new();
            explain_rep(env, var, 1, &mut seen, &mut s);
            s
        }
    })
}

fn explain_rep(env: &DistEnv, var: &str, depth: usize, seen: &mut BTreeSet<String>, out: &mut String) {
    if !seen.insert(var.to_string()) || depth > 8 {
        return;
    }
    let pad = "  ".repeat(depth);
    for p in env.causes(var) {
        let verb = if p.cause.is_root() { "forced REP by" } else { "REP because of" };
        out.push_str(&format!("{pad}{verb} {} at line {}\n", p.cause, p.span));
        let next = match &p.cause {
            Cause::Assigned { from } => Some(from.clone()),
            Cause::InParfor { parfor } => Some(parfor.to_string()),
            Cause::ParforAccess { array, .. } => Some(array.clone()),
            _ => None,
        };
        if let Some(n) = next {
            explain_rep(env, &n, depth + 1, seen, out);
        }
    }
}
