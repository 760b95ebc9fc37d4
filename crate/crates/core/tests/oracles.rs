//! Sequential and SPMD results against values computed directly here.

mod common;

use std::path::Path;

use dlg_core::ir::ScalarKind;
use dlg_core::pipeline::{lower_source, spmd_source};
use dlg_core::runtime::{datafile, run_sequential, run_spmd, RunConfig, Value};

fn write(dir: &Path, name: &str, dims: &[usize], data: &[f64]) {
    datafile::write(&dir.join(format!("{name}.dat")), ScalarKind::F64, dims, data).unwrap();
}

fn s(p: &Path) -> Value {
    Value::Str(p.to_string_lossy().into_owned())
}

fn array(v: &Value) -> Vec<f64> {
    v.as_array().expect("array result").1.to_vec()
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * x.abs().max(1.0))
}

/// Run on the sequential interpreter and on 1 and 3 ranks; return the
/// named output of each.
fn results(src: &str, cfg: &RunConfig, out: &str) -> Vec<Vec<f64>> {
    let seq = run_sequential(&lower_source(src).unwrap(), cfg).unwrap();
    let (_, p) = spmd_source(src).unwrap();
    let mut v = vec![array(seq.get(out).unwrap())];
    for n in [1, 3] {
        v.push(array(run_spmd(&p, &cfg.clone().nranks(n)).unwrap().get(out).unwrap()));
    }
    v
}

#[test]
fn constant_return() {
    let f = lower_source("entry function f()\n    return 2+3\nend\n").unwrap();
    let out = run_sequential(&f, &RunConfig::default()).unwrap();
    assert_eq!(out.values[0].1.as_scalar(), Some(5.0));
}

// D = 2, N = 8 points with labels in {-1, 1}.
const PTS: [[f64; 2]; 8] =
    [[0.5, 1.0], [-1.0, 0.25], [2.0, -0.5], [0.0, 1.5], [-0.75, -1.25], [1.25, 0.75], [-2.0, 0.5], [0.3, -0.9]];
const LAB: [f64; 8] = [1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, -1.0];

fn labeled(dir: &Path) {
    let flat: Vec<f64> = PTS.iter().flatten().copied().collect();
    write(dir, "points", &[2, 8], &flat);
    write(dir, "labels", &[8], &LAB);
}

#[test]
fn logistic_single_step_matches_gradient_formula() {
    let d = tempfile::tempdir().unwrap();
    labeled(d.path());
    let src = common::source("logistic_regression");
    let base = RunConfig::default().arg("file", s(d.path()));
    // Zero iterations expose the random start.
    let w0 = array(
        run_sequential(&lower_source(&src).unwrap(), &base.clone().arg("iters", Value::Scalar(0.0)))
            .unwrap()
            .get("w")
            .unwrap(),
    );
    let mut grad = [0.0; 2];
    for (x, l) in PTS.iter().zip(LAB) {
        let z = w0[0] * x[0] + w0[1] * x[1];
        let g = (1.0 / (1.0 + (-l * z).exp()) - 1.0) * l;
        grad[0] += g * x[0];
        grad[1] += g * x[1];
    }
    let want = [w0[0] - grad[0], w0[1] - grad[1]];
    for got in results(&src, &base.arg("iters", Value::Scalar(1.0)), "w") {
        assert!(close(&got, &want, 1e-12), "{got:?} vs {want:?}");
    }
}

#[test]
fn linear_regression_matches_direct_descent() {
    let d = tempfile::tempdir().unwrap();
    let flat: Vec<f64> = PTS.iter().flatten().copied().collect();
    write(d.path(), "points", &[2, 8], &flat);
    let resp: Vec<f64> = PTS.iter().map(|x| 0.7 * x[0] - 1.3 * x[1] + 0.2).collect();
    write(d.path(), "responses", &[8], &resp);
    let iters = 6;
    let alpha = 0.5 / 8.0;
    let mut w = [0.0f64; 2];
    for _ in 0..iters {
        let mut g = [0.0; 2];
        for (x, r) in PTS.iter().zip(&resp) {
            let e = w[0] * x[0] + w[1] * x[1] - r;
            g[0] += e * x[0];
            g[1] += e * x[1];
        }
        w = [w[0] - alpha * g[0], w[1] - alpha * g[1]];
    }
    let cfg = RunConfig::default().arg("file", s(d.path())).arg("iters", Value::Scalar(iters as f64));
    for got in results(&common::source("linear_regression"), &cfg, "w") {
        assert!(close(&got, &w, 1e-12), "{got:?} vs {w:?}");
    }
}

#[test]
fn kernel_density_matches_formula_on_five_points() {
    let d = tempfile::tempdir().unwrap();
    let x = [-1.0, -0.2, 0.0, 0.7, 1.9];
    let e = [-0.5, 0.0, 0.5, 2.5];
    write(d.path(), "points", &[5], &x);
    write(d.path(), "eval", &[4], &e);
    let bw = 0.6;
    let want: Vec<f64> = e
        .iter()
        .map(|ek| {
            let s: f64 = x.iter().map(|xn| (-((ek - xn) * (ek - xn)) / (2.0 * bw * bw)).exp()).sum();
            s / (5.0 * (2.0 * std::f64::consts::PI).sqrt() * bw)
        })
        .collect();
    let cfg = RunConfig::default().arg("file", s(d.path())).arg("bw", Value::Scalar(bw));
    for got in results(&common::source("kernel_density"), &cfg, "density") {
        assert!(close(&got, &want, 1e-12), "{got:?} vs {want:?}");
    }
}

#[test]
fn kmeans_matches_lloyd_iterations() {
    let d = tempfile::tempdir().unwrap();
    // Three well separated groups in 2-d.
    let pts: Vec<[f64; 2]> = (0..18)
        .map(|i| {
            let c = [[0.0, 0.0], [5.0, 5.0], [0.0, 6.0]][i % 3];
            let j = (i / 3) as f64;
            [c[0] + 0.1 * j.sin(), c[1] + 0.1 * j.cos()]
        })
        .collect();
    let flat: Vec<f64> = pts.iter().flatten().copied().collect();
    write(d.path(), "points", &[2, 18], &flat);
    let src = common::source("kmeans");
    let base = RunConfig::default().arg("file", s(d.path())).arg("numCenter", Value::Scalar(3.0));
    let mut c: Vec<[f64; 2]> = array(
        run_sequential(&lower_source(&src).unwrap(), &base.clone().arg("iters", Value::Scalar(0.0)))
            .unwrap()
            .get("centroids")
            .unwrap(),
    )
    .chunks(2)
    .map(|v| [v[0], v[1]])
    .collect();
    let iters = 3;
    for _ in 0..iters {
        let label: Vec<usize> = pts
            .iter()
            .map(|p| {
                let dist: Vec<f64> = c.iter().map(|q| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt()).collect();
                // First strict minimum against +inf, so a NaN centroid (empty
                // cluster) is never chosen.
                (0..3).fold((0, f64::INFINITY), |(b, m), k| if dist[k] < m { (k, dist[k]) } else { (b, m) }).0
            })
            .collect();
        c = (0..3)
            .map(|k| {
                let members: Vec<&[f64; 2]> =
                    pts.iter().zip(&label).filter(|(_, l)| **l == k).map(|(p, _)| p).collect();
                let n = members.len() as f64;
                [members.iter().map(|p| p[0]).sum::<f64>() / n, members.iter().map(|p| p[1]).sum::<f64>() / n]
            })
            .collect();
    }
    let want: Vec<f64> = c.iter().flatten().copied().collect();
    for got in results(&src, &base.arg("iters", Value::Scalar(iters as f64)), "centroids") {
        assert_eq!(got.len(), want.len());
        for (a, b) in got.iter().zip(&want) {
            assert!((a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12 * a.abs().max(1.0), "{got:?} vs {want:?}");
        }
    }
}

#[test]
fn matrix_product_sink_is_product_plus_small_noise() {
    let d = tempfile::tempdir().unwrap();
    let cfg = common::setup("matrix_multiply", d.path(), 1);
    let f = lower_source(&common::source("matrix_multiply")).unwrap();
    run_sequential(&f, &cfg).unwrap();
    let (_, m) = datafile::read_all(&d.path().join("M.dat")).unwrap();
    let (_, x) = datafile::read_all(&d.path().join("x.dat")).unwrap();
    let (h, y) = datafile::read_all(&d.path().join("out").join("y.dat")).unwrap();
    assert_eq!(h.dims, vec![4, 3]);
    for i in 0..4 {
        for j in 0..3 {
            let p: f64 = (0..6).map(|k| m[i + 4 * k] * x[k + 6 * j]).sum();
            let noise = y[i + 4 * j] - p;
            assert!((-1e-12..0.1).contains(&noise), "y[{i},{j}] - (Mx) = {noise}");
        }
    }
}
