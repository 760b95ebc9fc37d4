#![allow(dead_code)]

use std::path::Path;

use dlg_core::datagen::{generate, Generator};
use dlg_core::ir::ScalarKind;
use dlg_core::runtime::{datafile, RunConfig, Value};

pub const FIXTURES: [&str; 6] =
    ["logistic_regression", "linear_regression", "kmeans", "kernel_density", "matrix_multiply", "extern_call"];

pub fn source(name: &str) -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.dlg"));
    std::fs::read_to_string(p).unwrap()
}

fn s(p: &Path) -> Value {
    Value::Str(p.to_string_lossy().into_owned())
}

/// Write a small dataset for fixture `name` into `dir` and return the
/// arguments to run it with.
pub fn setup(name: &str, dir: &Path, seed: u64) -> RunConfig {
    let cfg = RunConfig::default();
    match name {
        "logistic_regression" | "extern_call" => {
            generate(dir, Generator::LabeledLinear { d: 3, n: 41 }, seed).unwrap();
            cfg.arg("iters", Value::Scalar(5.0)).arg("file", s(dir))
        }
        "linear_regression" => {
            generate(dir, Generator::Linear { d: 3, n: 41 }, seed).unwrap();
            cfg.arg("iters", Value::Scalar(5.0)).arg("file", s(dir))
        }
        "kmeans" => {
            generate(dir, Generator::Blobs { d: 2, n: 61, k: 3 }, seed).unwrap();
            cfg.arg("numCenter", Value::Scalar(3.0)).arg("iters", Value::Scalar(4.0)).arg("file", s(dir))
        }
        "kernel_density" => {
            generate(dir, Generator::Density { n: 53, m: 17 }, seed).unwrap();
            cfg.arg("bw", Value::Scalar(0.5)).arg("file", s(dir))
        }
        "matrix_multiply" => {
            let m: Vec<f64> = (0..24).map(|k| (k as f64 * 0.37).sin()).collect();
            let x: Vec<f64> = (0..18).map(|k| (k as f64 * 0.21).cos()).collect();
            datafile::write(&dir.join("M.dat"), ScalarKind::F64, &[4, 6], &m).unwrap();
            datafile::write(&dir.join("x.dat"), ScalarKind::F64, &[6, 3], &x).unwrap();
            std::fs::create_dir_all(dir.join("out")).unwrap();
            cfg.arg("file1", s(dir)).arg("file2", s(dir)).arg("file3", s(&dir.join("out")))
        }
        other => panic!("no setup for {other}"),
    }
}
