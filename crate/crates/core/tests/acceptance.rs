//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dlg_core::analysis::{analyze, explain, sweep_once, transfer_gemm, transfer_stmt, DistEnv, Options};
use dlg_core::datagen::{generate, Generator};
use dlg_core::distributed::partition;
use dlg_core::ir::visit::for_each_stmt;
use dlg_core::ir::{Distribution, FunctionIR, ScalarKind, Span, Stmt, StmtKind};
use dlg_core::pipeline::{lower_source, optimize_source, resilient_source, spmd_source};
use dlg_core::runtime::checkpoint::Store;
use dlg_core::runtime::{
    bit_identical, datafile, max_rel_error, run_sequential, run_spmd, young_interval, CheckpointConfig, Clock,
    RunConfig, Value,
};

use Distribution::*;

/// Relative error allowed between rank counts > 1 and the sequential run.
const REL_TOL: f64 = 1e-8;
/// Young interval check: expected value and absolute tolerance.
const YOUNG_1_3600: f64 = 84.853;
const YOUNG_TOL: f64 = 1e-3;
/// Relative tolerance for the square-root scaling sweep.
const SCALING_TOL: f64 = 1e-12;
const ORACLE_BUDGET_SECS: f64 = 60.0;
const GOLDEN_BUDGET_SECS: f64 = 1.0;

type Check = Result<String, String>;
type Sized = (&'static str, Generator, &'static [(&'static str, f64)]);
type Criterion = (&'static str, fn() -> Check);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn s(p: &Path) -> Value {
    Value::Str(p.to_string_lossy().into_owned())
}

fn dist(env: &DistEnv, v: &str) -> Distribution {
    env.arrays.get(v).copied().unwrap_or_else(|| panic!("`{v}` not in the table"))
}

fn golden_distributions() -> Check {
    let t = Instant::now();
    let cases: [(&str, &[(&str, Distribution)]); 3] = [
        ("logistic_regression", &[("points", OneDBlock), ("labels", OneDBlock), ("w", Replicated)]),
        ("kmeans", &[("points", OneDBlock), ("centroids", Replicated)]),
        ("matrix_multiply", &[("M", TwoDBlockCyclic), ("x", TwoDBlockCyclic), ("y", TwoDBlockCyclic)]),
    ];
    for (name, want) in cases {
        let env = analyze(&lower_source(&common::source(name)).unwrap()).unwrap();
        for (v, d) in want {
            let got = dist(&env, v).to_string();
            ensure(got == d.to_string(), || format!("{name}: {v} is {got}, want {d}"))?;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < GOLDEN_BUDGET_SECS, || format!("took {secs:.2}s"))?;
    Ok(format!("3 fixtures, {:.0} ms", secs * 1e3))
}

/// The four branches, written independently of the analysis:
/// distributions of (x, y, lhs) after the rule and the branch number.
fn gemm_rule(
    x: Distribution,
    xt: bool,
    y: Distribution,
    yt: bool,
    l: Distribution,
) -> (Distribution, Distribution, Distribution, u8) {
    if x == OneDBlock && y == OneDBlock && !xt && yt {
        (x, y, Replicated, 1)
    } else if x != TwoDBlockCyclic && y == OneDBlock && !yt && l == OneDBlock {
        (Replicated, y, l, 2)
    } else if [x, y, l].iter().all(|d| *d != Replicated) && [x, y, l].contains(&TwoDBlockCyclic) {
        (TwoDBlockCyclic, TwoDBlockCyclic, TwoDBlockCyclic, 3)
    } else {
        (Replicated, Replicated, Replicated, 4)
    }
}

fn gemm_truth_table() -> Check {
    let mut cases = 0;
    let mut seen = [0usize; 4];
    for x in Distribution::ALL {
        for y in Distribution::ALL {
            for l in Distribution::ALL {
                for xt in [false, true] {
                    for yt in [false, true] {
                        let mut env = DistEnv::default();
                        for (n, d) in [("x", x), ("y", y), ("l", l)] {
                            env.arrays.insert(n.into(), d);
                        }
                        let b = transfer_gemm(&mut env, "l", "x", xt, "y", yt, Span::new(1, 1));
                        let got = (env.array("x"), env.array("y"), env.array("l"), b.number());
                        let want = gemm_rule(x, xt, y, yt, l);
                        ensure(got == want, || format!("x={x} xt={xt} y={y} yt={yt} l={l}: {got:?} vs {want:?}"))?;
                        seen[b.number() as usize - 1] += 1;
                        cases += 1;
                    }
                }
            }
        }
    }
    ensure(cases == 108, || format!("{cases} cases"))?;
    ensure(seen.iter().all(|n| *n > 0), || format!("branch counts {seen:?}"))?;
    Ok(format!("{cases} cases, branch counts {seen:?}"))
}

fn analysed_stages() -> Vec<(String, FunctionIR)> {
    common::FIXTURES
        .iter()
        .flat_map(|n| {
            let o = optimize_source(&common::source(n)).unwrap();
            [(format!("{n}/lowered"), o.lowered), (format!("{n}/optimized"), o.func)]
        })
        .collect()
}

fn lattice_and_monotonicity() -> Check {
    // Meet laws over all pairs and triples, against the chain order.
    let rank = |d: Distribution| Distribution::ALL.iter().position(|x| *x == d).unwrap();
    ensure(rank(Replicated) < rank(TwoDBlockCyclic) && rank(TwoDBlockCyclic) < rank(OneDBlock), || {
        "ALL is not in lattice order".into()
    })?;
    let mut pairs = 0;
    for a in Distribution::ALL {
        ensure(a.meet(a) == a, || format!("{a} not idempotent"))?;
        for b in Distribution::ALL {
            let m = a.meet(b);
            ensure(m == b.meet(a), || format!("{a} ∧ {b} not commutative"))?;
            ensure(m == if rank(a) <= rank(b) { a } else { b }, || format!("{a} ∧ {b} = {m} is not the lower"))?;
            ensure(m.meet(a) == m && m.meet(b) == m, || format!("{a} ∧ {b} not a lower bound"))?;
            for c in Distribution::ALL {
                ensure(a.meet(b).meet(c) == a.meet(b.meet(c)), || format!("({a},{b},{c}) not associative"))?;
            }
            pairs += 1;
        }
    }

    let stages = analysed_stages();
    let opts = Options::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut transfers = 0usize;
    for trial in 0..1000 {
        let (name, f) = &stages[trial % stages.len()];
        let mut env = analyze(f).unwrap();
        for d in env.arrays.values_mut().chain(env.parfors.values_mut()) {
            *d = Distribution::ALL[rng.random_range(0..3)];
        }
        let mut bad = None;
        for_each_stmt(&f.body, &mut |st: &Stmt| {
            let mut e = env.clone();
            transfer_stmt(&mut e, f, st, &opts);
            transfers += 1;
            if bad.is_none() && !e.le(&env) {
                bad = Some(st.span);
            }
        });
        ensure(bad.is_none(), || format!("{name}: transfer at {:?} raised an entry", bad.unwrap()))?;
        let mut e = env.clone();
        sweep_once(&mut e, f, &opts);
        ensure(e.le(&env), || format!("{name}: sweep raised an entry"))?;
    }

    let mut worst = 0.0f64;
    for (name, f) in &stages {
        let env = analyze(f).unwrap();
        let bound = 2 * (env.arrays.len() + env.parfors.len()) + 1;
        ensure(env.sweeps <= bound, || format!("{name}: {} sweeps > bound {bound}", env.sweeps))?;
        let mut again = env.clone();
        ensure(!sweep_once(&mut again, f, &opts), || format!("{name}: not a fixed point"))?;
        worst = worst.max(env.sweeps as f64 / bound as f64);
    }
    Ok(format!(
        "{pairs} pairs; 1000 envs, {transfers} transfers; {} functions converge (max {:.0}% of bound)",
        stages.len(),
        worst * 100.0
    ))
}

fn loop_body(f: &FunctionIR) -> &[Stmt] {
    f.body
        .iter()
        .find_map(|s| match &s.kind {
            StmtKind::For { body, .. } => Some(body.as_slice()),
            _ => None,
        })
        .expect("iteration loop")
}

fn fusion_counts() -> Check {
    let mut out = Vec::new();
    for name in ["logistic_regression", "kmeans"] {
        let o = optimize_source(&common::source(name)).unwrap();
        let par: Vec<_> = loop_body(&o.func)
            .iter()
            .filter_map(|s| match &s.kind {
                StmtKind::Parfor(p) if o.env.parfor(p.id).is_1d() => Some(p),
                _ => None,
            })
            .collect();
        ensure(par.len() == 1, || format!("{name}: {} data-parallel parfors in the loop body", par.len()))?;
        if name == "kmeans" {
            ensure(par[0].loops.len() == 1, || "kmeans parfor is not a single loop over samples".into())?;
        }
        let r = &o.report;
        ensure(r.parfors_after <= r.parfors_before, || {
            format!("{name}: report {} -> {}", r.parfors_before, r.parfors_after)
        })?;
        out.push(format!("{name} {}->{} parfors", r.parfors_before, r.parfors_after));
    }
    Ok(out.join(", "))
}

fn oracle_equivalence() -> Check {
    let t = Instant::now();
    let sizes: [Sized; 4] = [
        ("logistic_regression", Generator::LabeledLinear { d: 10, n: 32_768 }, &[("iters", 20.0)]),
        ("linear_regression", Generator::Linear { d: 10, n: 32_768 }, &[("iters", 20.0)]),
        ("kmeans", Generator::Blobs { d: 10, n: 8_192, k: 5 }, &[("iters", 20.0), ("numCenter", 5.0)]),
        ("kernel_density", Generator::Density { n: 16_384, m: 256 }, &[("bw", 0.5)]),
    ];
    let mut worst = 0.0f64;
    for (name, gen, args) in sizes {
        let d = tempfile::tempdir().unwrap();
        generate(d.path(), gen, 7).unwrap();
        let mut cfg = RunConfig::default().arg("file", s(d.path()));
        for (k, v) in args {
            cfg = cfg.arg(k, Value::Scalar(*v));
        }
        let (o, p) = spmd_source(&common::source(name)).unwrap();
        let seq = run_sequential(&o.lowered, &cfg).map_err(|e| format!("{name}: {e}"))?;
        for n in [1, 2, 4, 8] {
            let out = run_spmd(&p, &cfg.clone().nranks(n)).map_err(|e| format!("{name} at {n}: {e}"))?;
            if n == 1 {
                ensure(bit_identical(&seq, &out), || format!("{name}: 1 rank is not bit-identical"))?;
            }
            let e = max_rel_error(&seq, &out).ok_or_else(|| format!("{name}: outputs differ in shape"))?;
            ensure(e <= REL_TOL, || format!("{name} at {n} ranks: relative error {e:e}"))?;
            worst = worst.max(e);
        }
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < ORACLE_BUDGET_SECS, || format!("took {secs:.1}s"))?;
    Ok(format!("4 fixtures x ranks 1,2,4,8; max rel error {worst:.1e} (tol {REL_TOL:e}); {secs:.1}s"))
}

fn partition_properties() -> Check {
    let mut cases = 0;
    for total in 0..=64 {
        for p in 1..=8 {
            let parts: Vec<(usize, usize)> = (0..p).map(|r| partition(total, p, r)).collect();
            let sum: usize = parts.iter().map(|x| x.1).sum();
            ensure(sum == total, || format!("partition({total},{p}) sums to {sum}"))?;
            let max = parts.iter().map(|x| x.1).max().unwrap();
            let min = parts.iter().map(|x| x.1).min().unwrap();
            ensure(max - min <= 1, || format!("partition({total},{p}) sizes {min}..{max}"))?;
            let contiguous = parts.windows(2).all(|w| w[0].0 + w[0].1 == w[1].0) && parts[0].0 == 0;
            ensure(contiguous, || format!("partition({total},{p}) blocks not contiguous"))?;
            cases += 1;
        }
    }
    let d = tempfile::tempdir().unwrap();
    let path = d.path().join("m.dat");
    let mut reads = 0;
    for cols in [1usize, 7, 13, 64] {
        let data: Vec<f64> = (0..3 * cols).map(|k| k as f64 * 0.25 - 1.0).collect();
        datafile::write(&path, ScalarKind::F64, &[3, cols], &data).unwrap();
        let (_, full) = datafile::read_all(&path).unwrap();
        for p in 1..=8 {
            let mut got = Vec::new();
            for r in 0..p {
                let (start, size) = partition(cols, p, r);
                got.extend(datafile::read_block(&path, start, size).unwrap().1);
            }
            ensure(got == full, || format!("{cols} columns over {p} ranks"))?;
            reads += 1;
        }
    }
    Ok(format!("{cases} (total, p) cases; {reads} concatenated block reads"))
}

fn checkpoint_restart() -> Check {
    let r = resilient_source(&common::source("logistic_regression")).unwrap();
    let names = r.plan.names();
    ensure(names == ["i", "w"], || format!("saved set {names:?}"))?;
    let data = tempfile::tempdir().unwrap();
    let base = common::setup("logistic_regression", data.path(), 5).arg("iters", Value::Scalar(20.0)).nranks(4);
    let clean = run_spmd(&r.checkpointed, &base).unwrap();
    let mut restored = Vec::new();
    for k in 1..=20 {
        let ck = tempfile::tempdir().unwrap();
        let mut cfg = base.clone();
        cfg.checkpoint = Some(CheckpointConfig {
            dir: ck.path().to_path_buf(),
            mtbf: 1e-3,
            cost_estimate: 1e-3,
            clock: Clock::virtual_step(1.0),
        });
        cfg.fail_at_iteration = Some(k);
        ensure(run_spmd(&r.checkpointed, &cfg).is_err(), || format!("k={k}: run did not fail"))?;
        cfg.fail_at_iteration = None;
        let resumed = run_spmd(&r.restart, &cfg).map_err(|e| format!("k={k}: restart failed: {e}"))?;
        ensure(bit_identical(&clean, &resumed), || format!("k={k}: restart differs from uninterrupted run"))?;
        ensure(Store::new(ck.path(), &r.checkpointed.func.name).list().is_empty(), || {
            format!("k={k}: checkpoints left behind")
        })?;
        restored.extend(resumed.stats.restored_from);
    }
    Ok(format!("saved {{{}}}; k=1..20 bit-identical, {} resumed from a checkpoint", names.join(", "), restored.len()))
}

fn young() -> Check {
    let t = young_interval(1.0, 3600.0).map_err(|e| e.to_string())?;
    ensure((t - YOUNG_1_3600).abs() <= YOUNG_TOL, || format!("young_interval(1, 3600) = {t}"))?;
    let mut n = 0;
    for c in [1e-3, 0.1, 1.0, 7.5, 60.0, 1e3] {
        for m in [1.0, 60.0, 3600.0, 86_400.0, 1e6] {
            let base = young_interval(c, m).unwrap();
            for (c2, m2) in [(2.0 * c, m), (c, 2.0 * m)] {
                let r = young_interval(c2, m2).unwrap() / base;
                ensure((r - 2f64.sqrt()).abs() <= SCALING_TOL, || format!("doubling at ({c}, {m}) scales by {r}"))?;
                n += 1;
            }
            let r = young_interval(4.0 * c, m).unwrap() / base;
            ensure((r - 2.0).abs() <= SCALING_TOL, || format!("quadrupling at ({c}, {m}) scales by {r}"))?;
        }
    }
    Ok(format!("young_interval(1, 3600) = {t:.3}; {n} doublings scale by sqrt 2"))
}

/// Put an opaque call on the first dataset of a fixture.
fn inject_extern(src: &str) -> (String, String) {
    let mut out = vec!["extern extern_touch".to_string()];
    let mut target = None;
    for line in src.lines() {
        out.push(line.to_string());
        if target.is_none() && line.contains("DataSource(") {
            let name = line.trim().split('=').next().unwrap().trim().to_string();
            out.push(format!("    extern_touch({name})"));
            target = Some(name);
        }
    }
    (out.join("\n") + "\n", target.expect("fixture reads a dataset"))
}

fn unknown_call() -> Check {
    let mut seen = Vec::new();
    for name in ["logistic_regression", "linear_regression", "kmeans", "kernel_density", "matrix_multiply"] {
        let (src, v) = inject_extern(&common::source(name));
        let env = analyze(&lower_source(&src).map_err(|e| format!("{name}: {e}"))?).unwrap();
        ensure(dist(&env, &v) == Replicated, || format!("{name}: `{v}` is {}", dist(&env, &v)))?;
        let cause = env.primary_cause(&v).map(|p| p.cause.to_string()).unwrap_or_default();
        ensure(cause.contains("unknown call extern_touch"), || format!("{name}: cause `{cause}`"))?;
        let text = explain(&env, &v).unwrap();
        ensure(text.contains("unknown call extern_touch"), || format!("{name}: explain says `{text}`"))?;
        seen.push(format!("{name}:{v}"));
    }
    let env = analyze(&lower_source(&common::source("extern_call")).unwrap()).unwrap();
    ensure(dist(&env, "points") == Replicated, || "extern_call fixture: points not REP".into())?;
    ensure(explain(&env, "points").unwrap().contains("unknown call extern_touch"), || {
        "extern_call fixture: explain".into()
    })?;
    Ok(format!("REP with named cause for extern_call and {}", seen.join(" ")))
}

fn main() {
    let checks: [Criterion; 9] = [
        ("golden distributions", golden_distributions),
        ("GEMM truth table", gemm_truth_table),
        ("lattice and monotonicity", lattice_and_monotonicity),
        ("fusion counts", fusion_counts),
        ("oracle equivalence", oracle_equivalence),
        ("partition properties", partition_properties),
        ("checkpoint minimality and restart", checkpoint_restart),
        ("Young interval", young),
        ("unknown-call conservatism", unknown_call),
    ];
    let mut failed = 0;
    for (i, (name, f)) in checks.iter().enumerate() {
        let r = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default())
        });
        match r {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {}. {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
