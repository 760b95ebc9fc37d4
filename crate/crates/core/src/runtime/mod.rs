//! Sequential interpreter and SPMD simulator.
//!
//! Both run the same engine: a sequential run is a one-rank world. Ranks
//! step independently until each reaches a collective, a loop boundary or
//! the end; the world then matches their requests and answers them in
//! rank order, so results never depend on scheduling.

pub mod checkpoint;
pub mod compile;
pub mod datafile;
mod exec;
mod world;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

pub use checkpoint::{young_interval, Clock};
pub use compile::{compile, Program};

use crate::distributed::SpmdProgram;
use crate::error::Result;
use crate::ir::FunctionIR;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Value {
    Scalar(f64),
    Array { dims: Vec<usize>, data: Vec<f64> },
    Str(String),
}

impl Value {
    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            Value::Scalar(x) => Some(*x),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<(&[usize], &[f64])> {
        match self {
            Value::Array { dims, data } => Some((dims, data)),
            _ => None,
        }
    }

    /// Every number in the value, in storage order.
    pub fn numbers(&self) -> Vec<f64> {
        match self {
            Value::Scalar(x) => vec![*x],
            Value::Array { data, .. } => data.clone(),
            Value::Str(_) => vec![],
        }
    }
}

/// Arguments seen by an extern implementation. Array arguments of calls
/// without a result are copied back after the call.
#[derive(Clone, Debug, PartialEq)]
pub enum ExternArg {
    Scalar(f64),
    Array { dims: Vec<usize>, data: Vec<f64> },
    Str(String),
}

pub type ExternFn = Arc<dyn Fn(&mut [ExternArg]) -> std::result::Result<f64, String> + Send + Sync>;

/// Implementations for functions declared `extern`.
#[derive(Clone, Default)]
pub struct Externs {
    fns: BTreeMap<String, ExternFn>,
}

impl Externs {
    /// The registry used by the CLI: `extern_touch` is a no-op.
    pub fn standard() -> Self {
        let mut e = Externs::default();
        e.register("extern_touch", |_| Ok(0.0));
        e
    }

    pub fn register(
        &mut self,
        name: &str,
        f: impl Fn(&mut [ExternArg]) -> std::result::Result<f64, String> + Send + Sync + 'static,
    ) {
        self.fns.insert(name.to_string(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Option<&ExternFn> {
        self.fns.get(name)
    }
}

impl std::fmt::Debug for Externs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_set().entries(self.fns.keys()).finish()
    }
}

/// How ranks are stepped between synchronization points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Schedule {
    /// One rank after another on the calling thread.
    Sequential,
    /// Ranks stepped concurrently on the rayon pool. Falls back to
    /// `Sequential` when the `parallel` feature is off.
    Parallel,
}

impl Default for Schedule {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Schedule::Parallel
        } else {
            Schedule::Sequential
        }
    }
}

#[derive(Clone, Debug)]
pub struct CheckpointConfig {
    pub dir: PathBuf,
    pub mtbf: f64,
    pub cost_estimate: f64,
    pub clock: Clock,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub nranks: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub args: BTreeMap<String, Value>,
    pub checkpoint: Option<CheckpointConfig>,
    /// Abort the world when the outermost loop is about to start this
    /// iteration.
    pub fail_at_iteration: Option<i64>,
    /// Fault injection: `(rank, n)` makes `rank` silently skip its n-th
    /// collective (1-based).
    pub skip_collective: Option<(usize, usize)>,
    pub check_divergence: bool,
    pub externs: Externs,
}

pub const DEFAULT_SEED: u64 = 1;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            nranks: 1,
            seed: DEFAULT_SEED,
            schedule: Schedule::default(),
            args: BTreeMap::new(),
            checkpoint: None,
            fail_at_iteration: None,
            skip_collective: None,
            check_divergence: true,
            externs: Externs::standard(),
        }
    }
}

impl RunConfig {
    pub fn arg(mut self, name: &str, v: Value) -> Self {
        self.args.insert(name.to_string(), v);
        self
    }

    pub fn nranks(mut self, n: usize) -> Self {
        self.nranks = n;
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Stats {
    pub collectives: usize,
    pub boundaries: usize,
    pub checkpoints_written: usize,
    pub restored_from: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Outputs {
    pub values: Vec<(String, Value)>,
    pub warnings: Vec<String>,
    pub stats: Stats,
}

impl Outputs {
    pub fn get(&self, name: &str) -> Option<&Value> {
        self.values.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// Interpret `f` on a single rank.
pub fn run_sequential(f: &FunctionIR, cfg: &RunConfig) -> Result<Outputs> {
    let prog = compile(f)?;
    let cfg = RunConfig { nranks: 1, ..cfg.clone() };
    world::run(&prog, &cfg, &BTreeSet::new())
}

/// Run an SPMD program on `cfg.nranks` simulated ranks.
pub fn run_spmd(p: &SpmdProgram, cfg: &RunConfig) -> Result<Outputs> {
    let prog = compile(&p.func)?;
    let rank_dependent: BTreeSet<String> = p.distributed.iter().chain(&p.rank_local).cloned().collect();
    world::run(&prog, cfg, &rank_dependent)
}

/// Largest relative deviation `|a-b| / max(1, |a|)` over two outputs
/// with the same names and shapes; `None` when they are not comparable.
/// Matching NaNs count as equal.
pub fn max_rel_error(a: &Outputs, b: &Outputs) -> Option<f64> {
    if a.values.len() != b.values.len() {
        return None;
    }
    let mut worst: f64 = 0.0;
    for ((na, va), (nb, vb)) in a.values.iter().zip(&b.values) {
        if na != nb {
            return None;
        }
        if let (Value::Array { dims: da, .. }, Value::Array { dims: db, .. }) = (va, vb) {
            if da != db {
                return None;
            }
        }
        let (xa, xb) = (va.numbers(), vb.numbers());
        if xa.len() != xb.len() {
            return None;
        }
        for (x, y) in xa.iter().zip(&xb) {
            if x.is_nan() && y.is_nan() {
                continue;
            }
            let e = (x - y).abs() / x.abs().max(1.0);
            if e.is_nan() {
                return Some(f64::INFINITY);
            }
            worst = worst.max(e);
        }
    }
    Some(worst)
}

/// Bitwise equality of two outputs' values.
pub fn bit_identical(a: &Outputs, b: &Outputs) -> bool {
    a.values.len() == b.values.len()
        && a.values.iter().zip(&b.values).all(|((na, va), (nb, vb))| {
            na == nb
                && {
                    let (xa, xb) = (va.numbers(), vb.numbers());
                    xa.len() == xb.len() && xa.iter().zip(&xb).all(|(x, y)| x.to_bits() == y.to_bits())
                }
                && match (va, vb) {
                    (Value::Array { dims: da, .. }, Value::Array { dims: db, .. }) => da == db,
                    (Value::Str(x), Value::Str(y)) => x == y,
                    _ => true,
                }
        })
}
