//! Rank scheduling: ranks stepped on the rayon pool vs one after another.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use dlg_core::datagen::{generate, Generator};
use dlg_core::pipeline::spmd_source;
use dlg_core::runtime::{run_spmd, RunConfig, Schedule, Value};

fn source(name: &str) -> String {
    let p = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.dlg"));
    std::fs::read_to_string(p).unwrap()
}

fn logistic(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), Generator::LabeledLinear { d: 10, n: 16_384 }, 1).unwrap();
    let (_, p) = spmd_source(&source("logistic_regression")).unwrap();
    let base = RunConfig::default()
        .arg("iters", Value::Scalar(5.0))
        .arg("file", Value::Str(dir.path().to_string_lossy().into_owned()));
    let mut g = c.benchmark_group("logistic_regression");
    g.sample_size(10);
    for nranks in [1, 4, 8] {
        for (label, schedule) in [("parallel", Schedule::Parallel), ("sequential", Schedule::Sequential)] {
            let mut cfg = base.clone().nranks(nranks);
            cfg.schedule = schedule;
            g.bench_with_input(BenchmarkId::new(label, nranks), &cfg, |b, cfg| b.iter(|| run_spmd(&p, cfg).unwrap()));
        }
    }
    g.finish();
}

fn kernel_density(c: &mut Criterion) {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), Generator::Density { n: 8_192, m: 128 }, 1).unwrap();
    let (_, p) = spmd_source(&source("kernel_density")).unwrap();
    let base = RunConfig::default()
        .arg("bw", Value::Scalar(0.5))
        .arg("file", Value::Str(dir.path().to_string_lossy().into_owned()));
    let mut g = c.benchmark_group("kernel_density");
    g.sample_size(10);
    for nranks in [1, 4, 8] {
        for (label, schedule) in [("parallel", Schedule::Parallel), ("sequential", Schedule::Sequential)] {
            let mut cfg = base.clone().nranks(nranks);
            cfg.schedule = schedule;
            g.bench_with_input(BenchmarkId::new(label, nranks), &cfg, |b, cfg| b.iter(|| run_spmd(&p, cfg).unwrap()));
        }
    }
    g.finish();
}

criterion_group!(benches, logistic, kernel_density);
criterion_main!(benches);
