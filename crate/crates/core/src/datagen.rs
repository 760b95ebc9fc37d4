//! Synthetic datasets shaped like the benchmark inputs.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};

use crate::error::{Error, ErrorKind, Result};
use crate::ir::ScalarKind;
use crate::runtime::datafile;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    /// `points` (d x n) standard normal.
    Gaussian { d: usize, n: usize },
    /// `points` (d x n) and `labels` (n) in {-1, 1} from a random
    /// hyperplane.
    LabeledLinear { d: usize, n: usize },
    /// `points` (d x n) and `responses` (n) from a random linear model
    /// plus noise.
    Linear { d: usize, n: usize },
    /// `points` (d x n) around `k` centers in the unit cube and their
    /// true `labels` (n) in 1..=k.
    Blobs { d: usize, n: usize, k: usize },
    /// `points` (n) and `eval` (m), both 1-d standard normal.
    Density { n: usize, m: usize },
}

impl Generator {
    pub fn name(&self) -> &'static str {
        match self {
            Generator::Gaussian { .. } => "gaussian",
            Generator::LabeledLinear { .. } => "labeled-linear",
            Generator::Linear { .. } => "linear",
            Generator::Blobs { .. } => "blobs",
            Generator::Density { .. } => "density",
        }
    }
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let nd = Normal::new(0.0, 1.0).expect("unit normal");
    (0..n).map(|_| nd.sample(rng)).collect()
}

/// Write the generator's datasets into `dir`; returns the files written.
pub fn generate(dir: &Path, g: Generator, seed: u64) -> Result<Vec<PathBuf>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut files: Vec<(&str, ScalarKind, Vec<usize>, Vec<f64>)> = Vec::new();
    match g {
        Generator::Gaussian { d, n } => files.push(("points", ScalarKind::F64, vec![d, n], normals(&mut rng, d * n))),
        Generator::LabeledLinear { d, n } => {
            let w = normals(&mut rng, d);
            let x = normals(&mut rng, d * n);
            let labels = (0..n)
                .map(|j| {
                    let s: f64 = (0..d).map(|k| w[k] * x[k + j * d]).sum();
                    if s >= 0.0 {
                        1.0
                    } else {
                        -1.0
                    }
                })
                .collect();
            files.push(("points", ScalarKind::F64, vec![d, n], x));
            files.push(("labels", ScalarKind::F64, vec![n], labels));
        }
        Generator::Linear { d, n } => {
            let w = normals(&mut rng, d);
            let x = normals(&mut rng, d * n);
            let noise = normals(&mut rng, n);
            let y = (0..n).map(|j| (0..d).map(|k| w[k] * x[k + j * d]).sum::<f64>() + 0.01 * noise[j]).collect();
            files.push(("points", ScalarKind::F64, vec![d, n], x));
            files.push(("responses", ScalarKind::F64, vec![n], y));
        }
        Generator::Blobs { d, n, k } => {
            if k == 0 {
                return Err(Error::new(ErrorKind::Io, None, "blobs needs k >= 1"));
            }
            let centers: Vec<f64> = (0..d * k).map(|_| rng.random::<f64>()).collect();
            let nd = Normal::new(0.0, 0.05).expect("valid sigma");
            let mut x = Vec::with_capacity(d * n);
            let mut labels = Vec::with_capacity(n);
            for _ in 0..n {
                let c = rng.random_range(0..k);
                for j in 0..d {
                    x.push(centers[j + c * d] + nd.sample(&mut rng));
                }
                labels.push((c + 1) as f64);
            }
            files.push(("points", ScalarKind::F64, vec![d, n], x));
            files.push(("labels", ScalarKind::I64, vec![n], labels));
        }
        Generator::Density { n, m } => {
            let x = normals(&mut rng, n);
            let e = normals(&mut rng, m);
            files.push(("points", ScalarKind::F64, vec![n], x));
            files.push(("eval", ScalarKind::F64, vec![m], e));
        }
    }
    let dir_s = dir.to_string_lossy();
    let mut out = Vec::new();
    for (name, elem, dims, data) in files {
        let p = datafile::dataset_path(&dir_s, name);
        datafile::write(&p, elem, &dims, &data)?;
        out.push(p);
    }
    Ok(out)
}
