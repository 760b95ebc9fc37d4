//! Dataset files: `"DLG1"`, element kind (u32), ndims (u32), dims (u64
//! each), then the column-major payload. All integers little-endian.

use std::fs;
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, ErrorKind, Result};
use crate::ir::ScalarKind;

pub const MAGIC: &[u8; 4] = b"DLG1";

#[derive(Clone, Debug, PartialEq)]
pub struct Header {
    pub elem: ScalarKind,
    pub dims: Vec<usize>,
}

impl Header {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        12 + 8 * self.dims.len()
    }
}

pub fn elem_size(k: ScalarKind) -> usize {
    match k {
        ScalarKind::F64 | ScalarKind::I64 => 8,
        ScalarKind::Bool => 1,
    }
}

fn kind_code(k: ScalarKind) -> u32 {
    match k {
        ScalarKind::F64 => 0,
        ScalarKind::I64 => 1,
        ScalarKind::Bool => 2,
    }
}

fn kind_from_code(c: u32) -> Option<ScalarKind> {
    match c {
        0 => Some(ScalarKind::F64),
        1 => Some(ScalarKind::I64),
        2 => Some(ScalarKind::Bool),
        _ => None,
    }
}

/// Where dataset `name` lives when the program's file argument is `dir`.
pub fn dataset_path(dir: &str, name: &str) -> PathBuf {
    let name = name.trim_start_matches('/');
    Path::new(dir).join(format!("{name}.dat"))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::io(format!("{}: file not found", path.display()))
    } else {
        Error::io(format!("{}: {e}", path.display()))
    }
}

fn shape_err(path: &Path, msg: impl std::fmt::Display) -> Error {
    Error::new(ErrorKind::Io, None, format!("{}: {msg}", path.display()))
}

pub fn read_header(path: &Path) -> Result<Header> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    header_from(&mut f, path)
}

fn header_from(f: &mut impl Read, path: &Path) -> Result<Header> {
    let mut b = [0u8; 12];
    f.read_exact(&mut b).map_err(|_| shape_err(path, "truncated header"))?;
    if &b[0..4] != MAGIC {
        return Err(shape_err(path, "not a dataset file (bad magic)"));
    }
    let elem = kind_from_code(u32::from_le_bytes(b[4..8].try_into().unwrap()))
        .ok_or_else(|| shape_err(path, "unknown element kind"))?;
    let ndims = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
    if ndims == 0 || ndims > 8 {
        return Err(shape_err(path, format!("bad ndims {ndims}")));
    }
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        let mut d = [0u8; 8];
        f.read_exact(&mut d).map_err(|_| shape_err(path, "truncated header"))?;
        dims.push(u64::from_le_bytes(d) as usize);
    }
    Ok(Header { elem, dims })
}

fn decode(elem: ScalarKind, bytes: &[u8]) -> Vec<f64> {
    match elem {
        ScalarKind::F64 => bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        ScalarKind::I64 => bytes.chunks_exact(8).map(|c| i64::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
        ScalarKind::Bool => bytes.iter().map(|b| if *b != 0 { 1.0 } else { 0.0 }).collect(),
    }
}

fn encode(elem: ScalarKind, data: &[f64], out: &mut Vec<u8>) {
    for &v in data {
        match elem {
            ScalarKind::F64 => out.extend_from_slice(&v.to_le_bytes()),
            ScalarKind::I64 => out.extend_from_slice(&(v as i64).to_le_bytes()),
            ScalarKind::Bool => out.push(u8::from(v != 0.0)),
        }
    }
}

pub fn read_all(path: &Path) -> Result<(Header, Vec<f64>)> {
    let h = read_header(path)?;
    let n = h.dims.last().copied().unwrap_or(0);
    let data = read_block(path, 0, n)?.1;
    Ok((h, data))
}

/// Columns `[start, start+size)` of the last dimension, with every
/// leading dimension in full.
pub fn read_block(path: &Path, start: usize, size: usize) -> Result<(Header, Vec<f64>)> {
    let mut f = fs::File::open(path).map_err(|e| io_err(path, e))?;
    let h = header_from(&mut f, path)?;
    let last = *h.dims.last().unwrap();
    if start + size > last {
        return Err(shape_err(path, format!("block {start}+{size} exceeds last dimension {last}")));
    }
    let inner: usize = h.dims[..h.dims.len() - 1].iter().product();
    let es = elem_size(h.elem);
    let flen = f.metadata().map_err(|e| io_err(path, e))?.len() as usize;
    if flen != h.byte_len() + h.len() * es {
        return Err(shape_err(
            path,
            format!("payload length {} does not match dims {:?}", flen - h.byte_len(), h.dims),
        ));
    }
    f.seek(SeekFrom::Start((h.byte_len() + start * inner * es) as u64)).map_err(|e| io_err(path, e))?;
    let mut buf = vec![0u8; size * inner * es];
    f.read_exact(&mut buf).map_err(|e| io_err(path, e))?;
    let data = decode(h.elem, &buf);
    Ok((h, data))
}

pub fn write(path: &Path, elem: ScalarKind, dims: &[usize], data: &[f64]) -> Result<()> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(shape_err(path, format!("{} elements for dims {dims:?}", data.len())));
    }
    let mut out = Vec::with_capacity(12 + 8 * dims.len() + n * elem_size(elem));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&kind_code(elem).to_le_bytes());
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    encode(elem, data, &mut out);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| io_err(path, e))?;
    f.write_all(&out).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_of_a_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.dat");
        let data: Vec<f64> = (0..20).map(f64::from).collect();
        write(&p, ScalarKind::F64, &[2, 10], &data).unwrap();
        let (h, b) = read_block(&p, 3, 3).unwrap();
        assert_eq!(h.dims, vec![2, 10]);
        assert_eq!(b, vec![6.0, 7.0, 8.0, 9.0, 10.0, 11.0]);
        assert_eq!(read_all(&p).unwrap().1, data);
    }

    #[test]
    fn int_and_bool_payloads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.dat");
        write(&p, ScalarKind::I64, &[3], &[1.0, 5.0, -2.0]).unwrap();
        assert_eq!(read_all(&p).unwrap().1, vec![1.0, 5.0, -2.0]);
        write(&p, ScalarKind::Bool, &[2], &[0.0, 3.0]).unwrap();
        assert_eq!(read_all(&p).unwrap().1, vec![0.0, 1.0]);
        assert_eq!(fs::metadata(&p).unwrap().len(), 12 + 8 + 2);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dat");
        write(&p, ScalarKind::F64, &[4], &[1.0; 4]).unwrap();
        let bytes = fs::read(&p).unwrap();
        fs::write(&p, &bytes[..bytes.len() - 3]).unwrap();
        assert!(read_all(&p).is_err());
        assert!(read_header(&dir.path().join("missing.dat")).unwrap_err().message.contains("file not found"));
    }
}
