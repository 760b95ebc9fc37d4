//! Checkpoint files and the interval policy.
//!
//! Layout: `"DLGC"`, iteration (i64), variable count (u32), then per
//! variable: name length (u32), name, kind (u8: 0 scalar, 1 array), ndims
//! (u32), dims (u64 each), f64 payload; finally the total file length
//! (u64) so truncation is detectable. Files live at
//! `<dir>/<function>/<iter>.ckpt` and are written to a temporary name
//! first, then renamed.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::error::{Error, ErrorKind, Result};

pub const MAGIC: &[u8; 4] = b"DLGC";

#[derive(Clone, Debug, PartialEq)]
pub enum SavedValue {
    Scalar(f64),
    Array { dims: Vec<usize>, data: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub iteration: i64,
    pub vars: Vec<(String, SavedValue)>,
}

/// Young's first-order optimum checkpoint interval, `sqrt(2 * cost * mtbf)`.
pub fn young_interval(checkpoint_cost: f64, mtbf: f64) -> Result<f64> {
    if !(checkpoint_cost > 0.0 && mtbf > 0.0) || !checkpoint_cost.is_finite() || !mtbf.is_finite() {
        return Err(Error::new(
            ErrorKind::Checkpoint,
            None,
            format!("young_interval needs positive inputs, got cost={checkpoint_cost} mtbf={mtbf}"),
        ));
    }
    Ok((2.0 * checkpoint_cost * mtbf).sqrt())
}

pub fn encode(s: &Snapshot) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&s.iteration.to_le_bytes());
    out.extend_from_slice(&(s.vars.len() as u32).to_le_bytes());
    for (name, v) in &s.vars {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let (kind, dims, data): (u8, &[usize], &[f64]) = match v {
            SavedValue::Scalar(x) => (0, &[], std::slice::from_ref(x)),
            SavedValue::Array { dims, data } => (1, dims, data),
        };
        out.push(kind);
        out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
        for d in dims {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for x in data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let total = out.len() as u64 + 8;
    out.extend_from_slice(&total.to_le_bytes());
    out
}

struct Cursor<'a> {
    b: &'a [u8],
    at: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.at + n > self.b.len() {
            return Err(corrupt("truncated"));
        }
        let s = &self.b[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn corrupt(msg: &str) -> Error {
    Error::new(ErrorKind::CorruptCheckpoint, None, format!("corrupt checkpoint: {msg}"))
}

pub fn decode(b: &[u8]) -> Result<Snapshot> {
    if b.len() < 24 || &b[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let total = u64::from_le_bytes(b[b.len() - 8..].try_into().unwrap());
    if total != b.len() as u64 {
        return Err(corrupt("length mismatch"));
    }
    let mut c = Cursor { b: &b[..b.len() - 8], at: 4 };
    let iteration = c.u64()? as i64;
    let n = c.u32()? as usize;
    let mut vars = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        let len = c.u32()? as usize;
        let name = String::from_utf8(c.take(len)?.to_vec()).map_err(|_| corrupt("bad name"))?;
        let kind = c.take(1)?[0];
        let nd = c.u32()? as usize;
        if nd > 8 {
            return Err(corrupt("bad ndims"));
        }
        let mut dims = Vec::with_capacity(nd);
        for _ in 0..nd {
            dims.push(c.u64()? as usize);
        }
        let count = if kind == 0 { 1 } else { dims.iter().product() };
        let raw = c.take(count.checked_mul(8).ok_or_else(|| corrupt("bad dims"))?)?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|x| f64::from_le_bytes(x.try_into().unwrap())).collect();
        let v = match kind {
            0 => SavedValue::Scalar(data[0]),
            1 => SavedValue::Array { dims, data },
            _ => return Err(corrupt("bad kind")),
        };
        vars.push((name, v));
    }
    if c.at != c.b.len() {
        return Err(corrupt("trailing bytes"));
    }
    Ok(Snapshot { iteration, vars })
}

/// Checkpoint directory for one function.
#[derive(Clone, Debug)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn new(root: &Path, function: &str) -> Self {
        Store { dir: root.join(function) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, s: &Snapshot) -> Result<PathBuf> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(format!("{}: {e}", self.dir.display())))?;
        let path = self.dir.join(format!("{}.ckpt", s.iteration));
        let tmp = self.dir.join(format!(".{}.ckpt.tmp", s.iteration));
        fs::write(&tmp, encode(s)).map_err(|e| Error::io(format!("{}: {e}", tmp.display())))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(format!("{}: {e}", path.display())))?;
        Ok(path)
    }

    /// Checkpoint files by iteration, ascending.
    pub fn list(&self) -> Vec<(i64, PathBuf)> {
        let Ok(rd) = fs::read_dir(&self.dir) else { return vec![] };
        let mut v: Vec<(i64, PathBuf)> = rd
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let p = e.path();
                let stem = p.file_name()?.to_str()?.strip_suffix(".ckpt")?.to_string();
                Some((stem.parse().ok()?, p))
            })
            .collect();
        v.sort();
        v
    }

    /// The latest checkpoint: `Ok(None)` when there is none, an error
    /// when the latest file is unreadable or corrupt.
    pub fn latest(&self) -> Result<Option<Snapshot>> {
        let Some((_, p)) = self.list().pop() else { return Ok(None) };
        let b = fs::read(&p).map_err(|e| Error::io(format!("{}: {e}", p.display())))?;
        decode(&b).map(Some).map_err(|e| Error { message: format!("{}: {}", p.display(), e.message), ..e })
    }

    pub fn cleanup(&self) -> Result<()> {
        for (_, p) in self.list() {
            fs::remove_file(&p).map_err(|e| Error::io(format!("{}: {e}", p.display())))?;
        }
        let _ = fs::remove_dir(&self.dir);
        Ok(())
    }
}

/// Time source for the checkpoint gate.
#[derive(Clone, Debug)]
pub enum Clock {
    Wall(Instant),
    /// Deterministic: every reading advances time by `step` seconds.
    Virtual {
        now: f64,
        step: f64,
    },
}

impl Clock {
    pub fn wall() -> Self {
        Clock::Wall(Instant::now())
    }

    pub fn virtual_step(step: f64) -> Self {
        Clock::Virtual { now: 0.0, step }
    }

    pub fn now(&mut self) -> f64 {
        match self {
            Clock::Wall(t0) => t0.elapsed().as_secs_f64(),
            Clock::Virtual { now, step } => {
                *now += *step;
                *now
            }
        }
    }
}

/// When to checkpoint. The first visit only starts the timer; later
/// visits fire once the Young interval for the running mean cost has
/// elapsed since the last checkpoint (or the start).
#[derive(Clone, Debug)]
pub struct Gate {
    pub mtbf: f64,
    clock: Clock,
    last: Option<f64>,
    cost_sum: f64,
    cost_n: u32,
    seed_cost: f64,
}

impl Gate {
    pub fn new(mtbf: f64, cost_estimate: f64, clock: Clock) -> Self {
        Gate { mtbf, clock, last: None, cost_sum: 0.0, cost_n: 0, seed_cost: cost_estimate }
    }

    /// Running mean of observed costs, seeded by the initial estimate.
    pub fn estimated_cost(&self) -> f64 {
        (self.seed_cost + self.cost_sum) / f64::from(self.cost_n + 1)
    }

    pub fn due(&mut self) -> Result<bool> {
        let now = self.clock.now();
        match self.last {
            None => {
                self.last = Some(now);
                Ok(false)
            }
            Some(t) => Ok(now - t >= young_interval(self.estimated_cost(), self.mtbf)?),
        }
    }

    /// Run `write` and account its duration as a checkpoint cost.
    pub fn record<T>(&mut self, write: impl FnOnce() -> Result<T>) -> Result<T> {
        let t0 = self.clock.now();
        let r = write()?;
        let t1 = self.clock.now();
        self.cost_sum += (t1 - t0).max(0.0);
        self.cost_n += 1;
        self.last = Some(t1);
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn snap() -> Snapshot {
        Snapshot {
            iteration: 7,
            vars: vec![
                ("i".into(), SavedValue::Scalar(7.0)),
                ("w".into(), SavedValue::Array { dims: vec![1, 2], data: vec![0.1, 0.2] }),
            ],
        }
    }

    #[test]
    fn round_trip() {
        assert_eq!(decode(&encode(&snap())).unwrap(), snap());
    }

    #[test]
    fn truncation_and_bad_magic_are_corrupt() {
        let b = encode(&snap());
        assert_eq!(decode(&b[..b.len() - 1]).unwrap_err().kind, ErrorKind::CorruptCheckpoint);
        let mut c = b.clone();
        c[0] = b'X';
        assert_eq!(decode(&c).unwrap_err().kind, ErrorKind::CorruptCheckpoint);
    }

    #[test]
    fn store_returns_latest_and_cleans_up() {
        let d = tempfile::tempdir().unwrap();
        let st = Store::new(d.path(), "f");
        assert_eq!(st.latest().unwrap(), None);
        let mut s = snap();
        st.write(&s).unwrap();
        s.iteration = 12;
        st.write(&s).unwrap();
        assert_eq!(st.latest().unwrap().unwrap().iteration, 12);
        st.cleanup().unwrap();
        assert!(st.list().is_empty());
    }

    #[test]
    fn young_values() {
        assert!((young_interval(1.0, 3600.0).unwrap() - 84.8528).abs() < 1e-3);
        assert!((young_interval(4.0, 4.0).unwrap() - 32f64.sqrt()).abs() < 1e-12);
        assert!(young_interval(0.0, 1.0).is_err());
        assert!(young_interval(1.0, -1.0).is_err());
    }

    #[test]
    fn gate_fires_after_interval() {
        // cost 0.5, mtbf 1 -> interval 1; each clock read advances 0.25.
        let mut g = Gate::new(1.0, 0.5, Clock::virtual_step(0.25));
        let fired: Vec<bool> = (0..5).map(|_| g.due().unwrap()).collect();
        assert_eq!(fired, vec![false, false, false, false, true]);
        g.record(|| Ok(())).unwrap();
        assert_eq!(g.estimated_cost(), (0.5 + 0.25) / 2.0);
    }
}
