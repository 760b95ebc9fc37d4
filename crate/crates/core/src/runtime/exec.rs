//! One rank: a resumable interpreter over a compiled [`Program`].

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::SavedValue;
use super::compile::*;
use super::datafile;
use super::{ExternArg, Externs, Value};
use crate::distributed::partition;
use crate::error::{Error, ErrorKind, Result};
use crate::ir::{ReduceOp, ScalarKind, Span};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Arr {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct Mem {
    pub scalars: Vec<f64>,
    pub arrays: Vec<Arr>,
    pub strs: Vec<String>,
}

/// Shared, read-only context for all ranks.
pub struct Ctx<'a> {
    pub prog: &'a Program,
    pub rng: ChaCha8Rng,
    pub externs: &'a Externs,
    pub nranks: usize,
    pub checkpointing: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(prog: &'a Program, seed: u64, externs: &'a Externs, nranks: usize, checkpointing: bool) -> Self {
        Ctx { prog, rng: ChaCha8Rng::seed_from_u64(seed), externs, nranks, checkpointing }
    }

    /// Uniform draw in `[0, 1)` for element `lin` of random stream `stream`.
    pub fn draw(&self, stream: u32, lin: u64) -> f64 {
        let mut r = self.rng.clone();
        r.set_stream(u64::from(stream));
        r.set_word_pos(2 * u128::from(lin));
        r.random::<f64>()
    }
}

/// A collective or world-level operation a rank is blocked on.
#[derive(Clone, Debug)]
pub struct Request {
    pub id: u32,
    pub span: Span,
    pub path: Vec<i64>,
    pub op: ReqOp,
}

#[derive(Clone, Debug)]
pub enum ReqOp {
    Allreduce {
        op: ReduceOp,
        data: Vec<f64>,
    },
    /// Only the root supplies a payload.
    Bcast {
        root: u32,
        len: usize,
        data: Option<Vec<f64>>,
    },
    BlockWrite {
        path: String,
        elem: ScalarKind,
        lead: Vec<usize>,
        start: usize,
        size: usize,
        data: Vec<f64>,
    },
    /// Rank 0 supplies the values, other ranks an empty list.
    Checkpoint {
        iteration: i64,
        vars: Vec<(String, SavedValue)>,
    },
    Restore {
        names: Vec<String>,
    },
    Cleanup,
}

impl ReqOp {
    pub fn kind(&self) -> &'static str {
        match self {
            ReqOp::Allreduce { .. } => "allreduce",
            ReqOp::Bcast { .. } => "bcast",
            ReqOp::BlockWrite { .. } => "block-write",
            ReqOp::Checkpoint { .. } => "checkpoint",
            ReqOp::Restore { .. } => "restore",
            ReqOp::Cleanup => "cleanup",
        }
    }

    /// The part of the request every rank must agree on.
    pub fn shape(&self) -> Vec<usize> {
        match self {
            ReqOp::Allreduce { data, op } => vec![data.len(), *op as usize],
            ReqOp::Bcast { root, len, .. } => vec![*root as usize, *len],
            ReqOp::BlockWrite { lead, .. } => lead.clone(),
            ReqOp::Restore { names } => vec![names.len()],
            ReqOp::Checkpoint { .. } | ReqOp::Cleanup => vec![],
        }
    }
}

pub enum Response {
    None,
    Data(Vec<f64>),
    /// Restored variables and the loop start; `None` means start fresh.
    Restore(Option<(i64, Vec<(String, SavedValue)>)>),
}

pub enum Yield {
    Collective(Request),
    Boundary { id: u32, path: Vec<i64> },
    Done(Vec<(String, Value)>),
}

#[derive(Clone, Debug)]
struct Frame {
    pc: usize,
    var: usize,
    cur: i64,
    hi: i64,
}

pub struct Rank {
    pub rank: usize,
    pub mem: Mem,
    frames: Vec<Frame>,
    pending: Option<usize>,
    skip_at: Option<usize>,
    collectives: usize,
    done: bool,
}

type Ev<T> = std::result::Result<T, String>;

fn rt(span: Span, msg: impl Into<String>) -> Error {
    Error::at(ErrorKind::Runtime, span, msg)
}

fn as_int(v: f64) -> Ev<i64> {
    if v.fract() != 0.0 || !v.is_finite() {
        return Err(format!("non-integral index or extent {v}"));
    }
    Ok(v as i64)
}

fn as_extent(v: f64) -> Ev<usize> {
    let i = as_int(v)?;
    usize::try_from(i).map_err(|_| format!("negative extent {i}"))
}

/// Column-major offset of a 1-based index, or a linear index when a
/// single subscript is given.
fn offset(dims: &[usize], idx: &[f64]) -> Ev<usize> {
    if idx.len() == 1 && dims.len() != 1 {
        let total: usize = dims.iter().product();
        let k = as_int(idx[0])?;
        if k < 1 || k as usize > total {
            return Err(format!("index {k} out of bounds for {total} elements"));
        }
        return Ok(k as usize - 1);
    }
    if idx.len() != dims.len() {
        return Err(format!("{} subscripts for a {}-d array", idx.len(), dims.len()));
    }
    let mut off = 0;
    let mut stride = 1;
    for (k, (&v, &d)) in idx.iter().zip(dims).enumerate() {
        let i = as_int(v)?;
        if i < 1 || i as usize > d {
            return Err(format!("index {i} out of bounds 1..{d} in dimension {}", k + 1));
        }
        off += (i as usize - 1) * stride;
        stride *= d;
    }
    Ok(off)
}

impl Mem {
    fn eval_idx(&self, ctx: &Ctx, idx: &[CExpr], buf: &mut [f64; 8]) -> Ev<usize> {
        if idx.len() > buf.len() {
            return Err("too many subscripts".into());
        }
        for (k, e) in idx.iter().enumerate() {
            buf[k] = self.eval(ctx, e)?;
        }
        Ok(idx.len())
    }

    pub fn eval(&self, ctx: &Ctx, e: &CExpr) -> Ev<f64> {
        Ok(match e {
            CExpr::Const(v) => *v,
            CExpr::Scalar(s) => self.scalars[*s],
            CExpr::Read { arr, idx } => {
                let mut buf = [0.0; 8];
                let n = self.eval_idx(ctx, idx, &mut buf)?;
                let a = &self.arrays[*arr];
                let off = offset(&a.dims, &buf[..n]).map_err(|m| format!("{}: {m}", ctx.prog.arrays[*arr]))?;
                a.data[off]
            }
            CExpr::Bin(op, a, b) => op.apply(self.eval(ctx, a)?, self.eval(ctx, b)?),
            CExpr::Un(op, a) => op.apply(self.eval(ctx, a)?),
            CExpr::Select(c, a, b) => {
                if self.eval(ctx, c)? != 0.0 {
                    self.eval(ctx, a)?
                } else {
                    self.eval(ctx, b)?
                }
            }
            CExpr::RandAt { stream, idx, dims } => {
                let mut buf = [0.0; 8];
                let n = self.eval_idx(ctx, idx, &mut buf)?;
                let mut d = Vec::with_capacity(dims.len());
                for e in dims {
                    d.push(as_extent(self.eval(ctx, e)?)?);
                }
                let lin = offset(&d, &buf[..n])?;
                ctx.draw(*stream, lin as u64)
            }
        })
    }

    fn str_val(&self, e: &CStr) -> String {
        match e {
            CStr::Lit(s) => s.clone(),
            CStr::Var(i) => self.strs[*i].clone(),
        }
    }

    fn extents(&self, ctx: &Ctx, dims: &[CExpr]) -> Ev<Vec<usize>> {
        dims.iter().map(|d| as_extent(self.eval(ctx, d)?)).collect()
    }

    pub fn slot_value(&self, s: Slot) -> Value {
        match s {
            Slot::Scalar(i) => Value::Scalar(self.scalars[i]),
            Slot::Array(i) => Value::Array { dims: self.arrays[i].dims.clone(), data: self.arrays[i].data.clone() },
            Slot::Str(i) => Value::Str(self.strs[i].clone()),
        }
    }

    fn saved(&self, s: Slot) -> Option<SavedValue> {
        match s {
            Slot::Scalar(i) => Some(SavedValue::Scalar(self.scalars[i])),
            Slot::Array(i) => {
                Some(SavedValue::Array { dims: self.arrays[i].dims.clone(), data: self.arrays[i].data.clone() })
            }
            Slot::Str(_) => None,
        }
    }

    fn slot_data(&self, s: Slot) -> Vec<f64> {
        match s {
            Slot::Scalar(i) => vec![self.scalars[i]],
            Slot::Array(i) => self.arrays[i].data.clone(),
            Slot::Str(_) => vec![],
        }
    }

    fn slot_len(&self, s: Slot) -> usize {
        match s {
            Slot::Scalar(_) => 1,
            Slot::Array(i) => self.arrays[i].data.len(),
            Slot::Str(_) => 0,
        }
    }

    fn set_slot_data(&mut self, s: Slot, data: Vec<f64>) {
        match s {
            Slot::Scalar(i) => self.scalars[i] = data[0],
            Slot::Array(i) => self.arrays[i].data = data,
            Slot::Str(_) => {}
        }
    }
}

fn file_path(mem: &Mem, file: &CStr, dataset: &str) -> std::path::PathBuf {
    datafile::dataset_path(&mem.str_val(file), dataset)
}

fn check_lead(span: Span, path: &Path, got: &[usize], want: &[usize]) -> Result<()> {
    if got.len() != want.len() || got[..got.len() - 1] != want[..want.len() - 1] {
        return Err(Error::at(
            ErrorKind::Io,
            span,
            format!("{}: file dims {got:?} do not match array dims {want:?}", path.display()),
        ));
    }
    Ok(())
}

impl Rank {
    pub fn new(
        rank: usize,
        prog: &Program,
        args: &std::collections::BTreeMap<String, Value>,
        skip_at: Option<usize>,
    ) -> Result<Rank> {
        let mut mem = Mem {
            scalars: vec![0.0; prog.scalars.len()],
            arrays: vec![Arr::default(); prog.arrays.len()],
            strs: vec![String::new(); prog.strs.len()],
        };
        for (name, slot) in &prog.params {
            let v = args
                .get(name)
                .ok_or_else(|| Error::new(ErrorKind::Runtime, None, format!("missing argument `{name}`")))?;
            match (slot, v) {
                (Slot::Scalar(i), Value::Scalar(x)) => mem.scalars[*i] = *x,
                (Slot::Str(i), Value::Str(s)) => mem.strs[*i] = s.clone(),
                (Slot::Array(i), Value::Array { dims, data }) => {
                    mem.arrays[*i] = Arr { dims: dims.clone(), data: data.clone() }
                }
                _ => {
                    return Err(Error::new(ErrorKind::Runtime, None, format!("argument `{name}` has the wrong kind")));
                }
            }
        }
        Ok(Rank {
            rank,
            mem,
            frames: vec![Frame { pc: 0, var: 0, cur: 0, hi: 0 }],
            pending: None,
            skip_at,
            collectives: 0,
            done: false,
        })
    }

    fn path(&self) -> Vec<i64> {
        self.frames[1..].iter().map(|f| f.cur).collect()
    }

    fn block<'p>(&self, prog: &'p Program) -> &'p [CStmt] {
        let mut b: &[CStmt] = &prog.body;
        for f in &self.frames[..self.frames.len() - 1] {
            match &b[f.pc].kind {
                CKind::For { body, .. } => b = body,
                _ => unreachable!("frame parent is a loop"),
            }
        }
        b
    }

    /// Run until the next collective, loop boundary or the end.
    pub fn step(&mut self, ctx: &Ctx) -> Result<Yield> {
        if self.pending.is_some() {
            return Err(Error::internal("rank stepped while blocked on a collective"));
        }
        if self.done {
            return Ok(Yield::Done(vec![]));
        }
        loop {
            let block = self.block(ctx.prog);
            let depth = self.frames.len() - 1;
            let pc = self.frames[depth].pc;
            if pc >= block.len() {
                if depth == 0 {
                    self.done = true;
                    return Ok(Yield::Done(vec![]));
                }
                let f = self.frames.last_mut().unwrap();
                if f.cur < f.hi {
                    f.cur += 1;
                    f.pc = 0;
                    self.mem.scalars[f.var] = f.cur as f64;
                    let id = self.block_parent_id(ctx.prog);
                    return Ok(Yield::Boundary { id, path: self.path() });
                }
                self.frames.pop();
                self.frames.last_mut().unwrap().pc += 1;
                continue;
            }
            let s = &block[pc];
            match &s.kind {
                CKind::For { var, lo, hi, resumable: true, .. } => {
                    let lo = self.eval_int(ctx, lo, s.span)?;
                    let hi = self.eval_int(ctx, hi, s.span)?;
                    if lo > hi {
                        self.frames[depth].pc += 1;
                        continue;
                    }
                    self.mem.scalars[*var] = lo as f64;
                    self.frames.push(Frame { pc: 0, var: *var, cur: lo, hi });
                    return Ok(Yield::Boundary { id: s.id, path: self.path() });
                }
                CKind::Return { vars } => {
                    let out = vars.iter().map(|(n, sl)| (n.clone(), self.mem.slot_value(*sl))).collect();
                    self.done = true;
                    return Ok(Yield::Done(out));
                }
                k if k.is_collective() => {
                    self.collectives += 1;
                    if self.skip_at == Some(self.collectives) {
                        self.frames[depth].pc += 1;
                        continue;
                    }
                    if !ctx.checkpointing {
                        match k {
                            CKind::Checkpoint { .. } | CKind::CheckpointCleanup => {
                                self.frames[depth].pc += 1;
                                continue;
                            }
                            CKind::CheckpointRestore { start, default, .. } => {
                                let d = self.mem.eval(ctx, default).map_err(|m| rt(s.span, m))?;
                                self.mem.scalars[*start] = d;
                                self.frames[depth].pc += 1;
                                continue;
                            }
                            _ => {}
                        }
                    }
                    let op = self.request(s)?;
                    self.pending = Some(s.id as usize);
                    return Ok(Yield::Collective(Request { id: s.id, span: s.span, path: self.path(), op }));
                }
                _ => {
                    self.exec(ctx, s)?;
                    self.frames[depth].pc += 1;
                }
            }
        }
    }

    fn block_parent_id(&self, prog: &Program) -> u32 {
        let mut b: &[CStmt] = &prog.body;
        let mut id = 0;
        for f in &self.frames[..self.frames.len() - 1] {
            id = b[f.pc].id;
            if let CKind::For { body, .. } = &b[f.pc].kind {
                b = body;
            }
        }
        id
    }

    fn eval_int(&self, ctx: &Ctx, e: &CExpr, span: Span) -> Result<i64> {
        self.mem.eval(ctx, e).and_then(as_int).map_err(|m| rt(span, m))
    }

    fn request(&self, s: &CStmt) -> Result<ReqOp> {
        let m = &self.mem;
        Ok(match &s.kind {
            CKind::Allreduce { slot, op } => ReqOp::Allreduce { op: *op, data: m.slot_data(*slot) },
            CKind::Bcast { slot, root } => ReqOp::Bcast {
                root: *root,
                len: m.slot_len(*slot),
                data: (self.rank == *root as usize).then(|| m.slot_data(*slot)),
            },
            CKind::BlockWrite { arr, dataset, file, start, size, elem } => {
                let a = &m.arrays[*arr];
                ReqOp::BlockWrite {
                    path: file_path(m, file, dataset).to_string_lossy().into_owned(),
                    elem: *elem,
                    lead: a.dims[..a.dims.len().saturating_sub(1)].to_vec(),
                    start: m.scalars[*start] as usize,
                    size: m.scalars[*size] as usize,
                    data: a.data.clone(),
                }
            }
            CKind::Checkpoint { vars, index } => ReqOp::Checkpoint {
                iteration: m.scalars[*index] as i64 - 1,
                vars: if self.rank == 0 {
                    vars.iter().filter_map(|(n, sl)| Some((n.clone(), m.saved(*sl)?))).collect()
                } else {
                    vec![]
                },
            },
            CKind::CheckpointRestore { vars, .. } => {
                ReqOp::Restore { names: vars.iter().map(|(n, _)| n.clone()).collect() }
            }
            CKind::CheckpointCleanup => ReqOp::Cleanup,
            _ => return Err(Error::internal(format!("not a collective at {}", s.span))),
        })
    }

    /// Apply the world's answer to the pending request and move past it.
    pub fn complete(&mut self, ctx: &Ctx, resp: Response) -> Result<()> {
        if self.pending.take().is_none() {
            return Err(Error::internal("no pending collective"));
        }
        let depth = self.frames.len() - 1;
        let pc = self.frames[depth].pc;
        let s = &self.block(ctx.prog)[pc];
        match (&s.kind, resp) {
            (CKind::Allreduce { slot, .. } | CKind::Bcast { slot, .. }, Response::Data(d)) => {
                self.mem.set_slot_data(*slot, d);
            }
            (CKind::CheckpointRestore { vars, start, default }, Response::Restore(r)) => match r {
                Some((iter, saved)) => {
                    for (name, slot) in vars {
                        let Some((_, v)) = saved.iter().find(|(n, _)| n == name) else { continue };
                        match (slot, v) {
                            (Slot::Scalar(i), SavedValue::Scalar(x)) => self.mem.scalars[*i] = *x,
                            (Slot::Array(i), SavedValue::Array { dims, data }) => {
                                let cur = &self.mem.arrays[*i].dims;
                                if !cur.is_empty() && cur != dims {
                                    return Err(rt(
                                        s.span,
                                        format!("checkpointed `{name}` has shape {dims:?}, expected {cur:?}"),
                                    ));
                                }
                                self.mem.arrays[*i] = Arr { dims: dims.clone(), data: data.clone() }
                            }
                            _ => return Err(rt(s.span, format!("checkpointed `{name}` has the wrong kind"))),
                        }
                    }
                    self.mem.scalars[*start] = (iter + 1) as f64;
                }
                None => {
                    self.mem.scalars[*start] = self.mem.eval(ctx, default).map_err(|m| rt(s.span, m))?;
                }
            },
            (_, Response::None) => {}
            _ => return Err(Error::internal(format!("unexpected collective response at {}", s.span))),
        }
        self.frames[depth].pc += 1;
        Ok(())
    }

    /// Execute a non-resumable statement to completion.
    fn exec(&mut self, ctx: &Ctx, s: &CStmt) -> Result<()> {
        self.exec_inner(ctx, s).map_err(|e| e.with_span(s.span))
    }

    fn exec_inner(&mut self, ctx: &Ctx, s: &CStmt) -> Result<()> {
        let sp = s.span;
        let ev = |m: &Mem, e: &CExpr| m.eval(ctx, e).map_err(|msg| rt(sp, msg));
        match &s.kind {
            CKind::SetScalar { dst, e } => self.mem.scalars[*dst] = ev(&self.mem, e)?,
            CKind::SetStr { dst, e } => self.mem.strs[*dst] = self.mem.str_val(e),
            CKind::CopyArray { dst, src } => self.mem.arrays[*dst] = self.mem.arrays[*src].clone(),
            CKind::Map { lhs, op, args } => self.map(ctx, sp, *lhs, op, args)?,
            CKind::Reduce { lhs, op, arg } => {
                let mut acc = op.identity();
                for &x in &self.mem.arrays[*arg].data {
                    acc = op.combine(acc, x);
                }
                self.mem.scalars[*lhs] = acc;
            }
            CKind::Loops { loops, reductions, body } => {
                for (slot, op) in reductions {
                    match *slot {
                        Slot::Scalar(i) => self.mem.scalars[i] = op.identity(),
                        Slot::Array(i) => self.mem.arrays[i].data.fill(op.identity()),
                        Slot::Str(_) => {}
                    }
                }
                let mut bounds = Vec::with_capacity(loops.len());
                for l in loops {
                    bounds.push((self.eval_int(ctx, &l.lo, sp)?, self.eval_int(ctx, &l.hi, sp)?));
                }
                self.nest(ctx, loops, &bounds, loops.len(), body)?;
            }
            CKind::Write { arr, idx, val } => {
                let v = ev(&self.mem, val)?;
                let off = self.elem_offset(ctx, *arr, idx, sp)?;
                self.mem.arrays[*arr].data[off] = v;
            }
            CKind::ReduceScalar { dst, op, val } => {
                let v = ev(&self.mem, val)?;
                self.mem.scalars[*dst] = op.combine(self.mem.scalars[*dst], v);
            }
            CKind::ReduceElem { arr, idx, op, val } => {
                let v = ev(&self.mem, val)?;
                let off = self.elem_offset(ctx, *arr, idx, sp)?;
                let d = &mut self.mem.arrays[*arr].data[off];
                *d = op.combine(*d, v);
            }
            CKind::Gemm { out, x, xt, y, yt } => self.gemm(ctx, sp, *out, *x, *xt, *y, *yt)?,
            CKind::Alloc { arr, dims } => {
                let d = self.mem.extents(ctx, dims).map_err(|m| rt(sp, m))?;
                let n = d.iter().product();
                self.mem.arrays[*arr] = Arr { dims: d, data: vec![0.0; n] };
            }
            CKind::SizeQuery { outs, dataset, file } => {
                let p = file_path(&self.mem, file, dataset);
                let h = datafile::read_header(&p).map_err(|e| e.with_span(sp))?;
                if h.dims.len() != outs.len() {
                    return Err(Error::at(
                        ErrorKind::Io,
                        sp,
                        format!(
                            "{}: dataset has {} dimensions, program expects {}",
                            p.display(),
                            h.dims.len(),
                            outs.len()
                        ),
                    ));
                }
                for (o, d) in outs.iter().zip(&h.dims) {
                    self.mem.scalars[*o] = *d as f64;
                }
            }
            CKind::DataSource { arr, dataset, file } => {
                let p = file_path(&self.mem, file, dataset);
                let (h, data) = datafile::read_all(&p).map_err(|e| e.with_span(sp))?;
                let a = &mut self.mem.arrays[*arr];
                if h.dims != a.dims {
                    return Err(Error::at(
                        ErrorKind::Io,
                        sp,
                        format!("{}: file dims {:?} do not match array dims {:?}", p.display(), h.dims, a.dims),
                    ));
                }
                a.data = data;
            }
            CKind::BlockRead { arr, dataset, file, start, size } => {
                let p = file_path(&self.mem, file, dataset);
                let (st, sz) = (self.mem.scalars[*start] as usize, self.mem.scalars[*size] as usize);
                let (h, data) = datafile::read_block(&p, st, sz).map_err(|e| e.with_span(sp))?;
                let a = &mut self.mem.arrays[*arr];
                check_lead(sp, &p, &h.dims, &a.dims)?;
                if data.len() != a.data.len() {
                    return Err(rt(
                        sp,
                        format!("block of {} elements for a local array of {}", data.len(), a.data.len()),
                    ));
                }
                a.data = data;
            }
            CKind::DataSink { arr, dataset, file, elem } => {
                let p = file_path(&self.mem, file, dataset);
                let a = &self.mem.arrays[*arr];
                datafile::write(&p, *elem, &a.dims, &a.data).map_err(|e| e.with_span(sp))?;
            }
            CKind::Call { result, name, args, known } => self.call(ctx, sp, *result, name, args, *known)?,
            CKind::For { var, lo, hi, body, .. } => {
                let lo = self.eval_int(ctx, lo, sp)?;
                let hi = self.eval_int(ctx, hi, sp)?;
                for i in lo..=hi {
                    self.mem.scalars[*var] = i as f64;
                    for st in body {
                        self.exec(ctx, st)?;
                    }
                }
            }
            CKind::Nop => {}
            CKind::Partition { total, start, size } => {
                let t = self.mem.eval(ctx, total).and_then(as_extent).map_err(|m| rt(sp, m))?;
                let (st, sz) = partition(t, ctx.nranks, self.rank);
                self.mem.scalars[*start] = st as f64;
                self.mem.scalars[*size] = sz as f64;
            }
            CKind::OnRoot(inner) => {
                if self.rank == 0 {
                    self.exec(ctx, inner)?;
                }
            }
            CKind::Return { .. } => return Err(Error::internal("return inside a loop body")),
            k if k.is_collective() => return Err(Error::internal("collective inside a parallel loop body")),
            _ => unreachable!(),
        }
        Ok(())
    }

    fn elem_offset(&self, ctx: &Ctx, arr: usize, idx: &[CExpr], sp: Span) -> Result<usize> {
        let mut buf = [0.0; 8];
        let n = self.mem.eval_idx(ctx, idx, &mut buf).map_err(|m| rt(sp, m))?;
        offset(&self.mem.arrays[arr].dims, &buf[..n]).map_err(|m| rt(sp, format!("{}: {m}", ctx.prog.arrays[arr])))
    }

    fn nest(&mut self, ctx: &Ctx, loops: &[CLoop], bounds: &[(i64, i64)], level: usize, body: &[CStmt]) -> Result<()> {
        if level == 0 {
            for st in body {
                self.exec(ctx, st)?;
            }
            return Ok(());
        }
        let (lo, hi) = bounds[level - 1];
        let var = loops[level - 1].var;
        for i in lo..=hi {
            self.mem.scalars[var] = i as f64;
            self.nest(ctx, loops, bounds, level - 1, body)?;
        }
        Ok(())
    }

    fn map(&mut self, ctx: &Ctx, sp: Span, lhs: usize, op: &crate::ir::MapOp, args: &[COperand]) -> Result<()> {
        use crate::ir::MapOp;
        let n = self.mem.arrays[lhs].data.len();
        let mut scal = Vec::with_capacity(args.len());
        for a in args {
            match a {
                COperand::Array(i) => {
                    if self.mem.arrays[*i].data.len() != n {
                        return Err(rt(
                            sp,
                            format!(
                                "elementwise operands differ in size: {} has {:?}, {} has {:?}",
                                ctx.prog.arrays[lhs],
                                self.mem.arrays[lhs].dims,
                                ctx.prog.arrays[*i],
                                self.mem.arrays[*i].dims
                            ),
                        ));
                    }
                    scal.push(None);
                }
                COperand::Scalar(e) => scal.push(Some(self.mem.eval(ctx, e).map_err(|m| rt(sp, m))?)),
            }
        }
        let get = |mem: &Mem, k: usize, j: usize| match (&args[k], scal[k]) {
            (_, Some(v)) => v,
            (COperand::Array(i), None) => mem.arrays[*i].data[j],
            _ => unreachable!(),
        };
        let mut out = vec![0.0; n];
        match op {
            MapOp::Bin(b) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = b.apply(get(&self.mem, 0, j), get(&self.mem, 1, j));
                }
            }
            MapOp::Un(u) => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = u.apply(get(&self.mem, 0, j));
                }
            }
            MapOp::Fill(v) => out.fill(*v),
            MapOp::Rand { stream } => {
                for (j, o) in out.iter_mut().enumerate() {
                    *o = ctx.draw(*stream, j as u64);
                }
            }
        }
        self.mem.arrays[lhs].data = out;
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn gemm(&mut self, ctx: &Ctx, sp: Span, out: usize, x: usize, xt: bool, y: usize, yt: bool) -> Result<()> {
        let mat = |a: &Arr| -> (usize, usize) {
            match a.dims.as_slice() {
                [r, c] => (*r, *c),
                [r] => (*r, 1),
                _ => (0, 0),
            }
        };
        let (xa, ya) = (&self.mem.arrays[x], &self.mem.arrays[y]);
        let (xr, xc) = mat(xa);
        let (yr, yc) = mat(ya);
        let (m, k) = if xt { (xc, xr) } else { (xr, xc) };
        let (k2, n) = if yt { (yc, yr) } else { (yr, yc) };
        let oa = &self.mem.arrays[out];
        let (or, oc) = mat(oa);
        if k != k2 || or != m || oc != n {
            return Err(rt(
                sp,
                format!(
                    "matrix product shapes do not fit: {} {:?}{}, {} {:?}{}, result {:?}",
                    ctx.prog.arrays[x],
                    xa.dims,
                    if xt { "'" } else { "" },
                    ctx.prog.arrays[y],
                    ya.dims,
                    if yt { "'" } else { "" },
                    oa.dims
                ),
            ));
        }
        let xv = |i: usize, kk: usize| if xt { xa.data[kk + i * xr] } else { xa.data[i + kk * xr] };
        let yv = |kk: usize, j: usize| if yt { ya.data[j + kk * yr] } else { ya.data[kk + j * yr] };
        let mut res = vec![0.0; m * n];
        for j in 0..n {
            for i in 0..m {
                let mut acc = 0.0;
                for kk in 0..k {
                    acc += xv(i, kk) * yv(kk, j);
                }
                res[i + j * m] = acc;
            }
        }
        self.mem.arrays[out].data = res;
        Ok(())
    }

    fn call(
        &mut self,
        ctx: &Ctx,
        sp: Span,
        result: Option<Slot>,
        name: &str,
        args: &[CArg],
        known: bool,
    ) -> Result<()> {
        if known && name == "reshape" {
            let (Some(Slot::Array(r)), Some(CArg::Array(src))) = (result, args.first()) else {
                return Err(rt(sp, "reshape needs an array result and argument"));
            };
            let data = self.mem.arrays[*src].data.clone();
            let dst = &mut self.mem.arrays[r];
            if dst.dims.is_empty() {
                let mut d = Vec::new();
                for a in &args[1..] {
                    let CArg::Scalar(e) = a else { return Err(rt(sp, "reshape dims must be scalars")) };
                    d.push(self.mem.eval(ctx, e).and_then(as_extent).map_err(|m| rt(sp, m))?);
                }
                self.mem.arrays[r].dims = d;
            }
            let dst = &mut self.mem.arrays[r];
            if dst.dims.iter().product::<usize>() != data.len() {
                return Err(rt(sp, format!("cannot reshape {} elements to {:?}", data.len(), dst.dims)));
            }
            dst.data = data;
            return Ok(());
        }
        let f =
            ctx.externs.get(name).ok_or_else(|| rt(sp, format!("no implementation registered for extern `{name}`")))?;
        let mut xs = Vec::with_capacity(args.len());
        for a in args {
            xs.push(match a {
                CArg::Scalar(e) => ExternArg::Scalar(self.mem.eval(ctx, e).map_err(|m| rt(sp, m))?),
                CArg::Array(i) => {
                    let a = &self.mem.arrays[*i];
                    ExternArg::Array { dims: a.dims.clone(), data: a.data.clone() }
                }
                CArg::Str(s) => ExternArg::Str(self.mem.str_val(s)),
            });
        }
        let r = f(&mut xs).map_err(|m| rt(sp, format!("{name}: {m}")))?;
        match result {
            Some(Slot::Scalar(i)) => self.mem.scalars[i] = r,
            Some(_) => return Err(rt(sp, format!("extern `{name}` must return a scalar"))),
            None => {
                for (a, x) in args.iter().zip(xs) {
                    if let (CArg::Array(i), ExternArg::Array { dims, data }) = (a, x) {
                        self.mem.arrays[*i] = Arr { dims, data };
                    }
                }
            }
        }
        Ok(())
    }
}
