use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn fixture(name: &str) -> String {
    root().join("crates/core/fixtures").join(format!("{name}.dlg")).to_string_lossy().into_owned()
}

fn dlg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dlg")).args(args).env_remove("DLG_SEED").output().unwrap()
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

/// Load `schemas/<name>.schema.json`, inlining references to sibling
/// schema files.
fn schema(name: &str) -> Value {
    let text = std::fs::read_to_string(root().join("schemas").join(format!("{name}.schema.json"))).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    inline_refs(&mut v);
    v
}

fn inline_refs(v: &mut Value) {
    match v {
        Value::Object(m) => {
            if let Some(Value::String(r)) = m.get("$ref") {
                if let Some(file) = r.strip_suffix(".schema.json") {
                    let mut inner = schema(file);
                    inner.as_object_mut().unwrap().remove("$schema");
                    *v = inner;
                    return;
                }
            }
            m.values_mut().for_each(inline_refs);
        }
        Value::Array(a) => a.iter_mut().for_each(inline_refs),
        _ => {}
    }
}

fn assert_valid(schema_name: &str, doc: &str) -> Value {
    let v: Value = serde_json::from_str(doc).unwrap_or_else(|e| panic!("not JSON ({e}): {doc}"));
    let s = schema(schema_name);
    let validator = jsonschema::validator_for(&s).unwrap();
    let errors: Vec<String> = validator.iter_errors(&v).map(|e| format!("{e} at {}", e.instance_path())).collect();
    assert!(errors.is_empty(), "{schema_name}: {errors:?}\n{doc}");
    v
}

fn gen(dir: &Path, kind: &str, extra: &[&str]) {
    let d = dir.to_str().unwrap();
    let mut a = vec!["gen-data", kind, "--dir", d, "--seed", "3"];
    a.extend_from_slice(extra);
    stdout(&dlg(&a));
}

#[test]
fn analyze_reports_replicated_weights_with_cause() {
    let out = stdout(&dlg(&["analyze", &fixture("logistic_regression")]));
    let w = out.lines().find(|l| l.starts_with("w ")).unwrap();
    assert!(w.contains("REP") && w.contains("GEMM"), "{w}");
    assert!(out.lines().any(|l| l.starts_with("points ") && l.contains("1D_B")));
}

#[test]
fn analyze_json_matches_schema() {
    for name in ["logistic_regression", "kmeans", "matrix_multiply", "extern_call"] {
        let out = stdout(&dlg(&["analyze", &fixture(name), "--format", "json"]));
        assert_valid("analyze", &out);
    }
}

#[test]
fn unknown_call_is_named_by_analyze_and_explain() {
    let out = stdout(&dlg(&["analyze", &fixture("extern_call")]));
    let row = out.lines().find(|l| l.starts_with("points ")).unwrap();
    assert!(row.contains("REP") && row.contains("unknown call extern_touch"), "{row}");
    let e = stdout(&dlg(&["explain", &fixture("extern_call"), "points"]));
    assert!(e.contains("unknown call extern_touch"), "{e}");
}

#[test]
fn explain_distinguishes_forced_and_parallel() {
    let w = stdout(&dlg(&["explain", &fixture("logistic_regression"), "w"]));
    assert!(w.contains("forced REP by GEMM"), "{w}");
    let p = stdout(&dlg(&["explain", &fixture("logistic_regression"), "points"]));
    assert_eq!(p.trim(), "points: 1D_B (maximally parallel)");
    let j = stdout(&dlg(&["explain", &fixture("logistic_regression"), "w", "--format", "json"]));
    assert_valid("explain", &j);
}

#[test]
fn explain_unknown_variable_exits_one() {
    let o = dlg(&["explain", &fixture("logistic_regression"), "bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("UnknownVariable"));
    let o = dlg(&["explain", &fixture("logistic_regression"), "bogus", "--format", "json"]);
    assert_eq!(o.status.code(), Some(1));
    let v = assert_valid("error", &String::from_utf8(o.stdout).unwrap());
    assert_eq!(v["error"]["kind"], "UnknownVariable");
}

#[test]
fn missing_input_is_a_user_error() {
    let o = dlg(&["run", "missing-file.dlg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("file not found"));
    assert_eq!(dlg(&["run", &fixture("logistic_regression"), "--no-such-flag"]).status.code(), Some(1));
}

#[test]
fn syntax_errors_carry_a_location() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("bad.dlg");
    std::fs::write(&p, "entry function f(x)\n    y = x +\nend\n").unwrap();
    let o = dlg(&["analyze", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("SyntaxError") && err.contains("2:12"), "{err}");
}

#[test]
fn run_prints_the_same_weights_on_one_and_four_ranks() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "labeled-linear", &["--d", "3", "--n", "64"]);
    let file = format!("file={}", d.path().display());
    let base = ["run", &fixture("logistic_regression"), "--arg", "iters=4", "--arg", &file, "--format", "json"];
    let one = assert_valid("run", &stdout(&dlg(&[&base[..], &["--nranks", "1"]].concat())));
    let four = assert_valid("run", &stdout(&dlg(&[&base[..], &["--nranks", "4"]].concat())));
    let w = |v: &Value| {
        v["values"][0]["value"]["data"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).collect::<Vec<_>>()
    };
    for (a, b) in w(&one).iter().zip(w(&four)) {
        assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0));
    }
    assert_eq!(one["values"][0]["name"], "w");
}

#[test]
fn run_with_fusion_report_matches_schema() {
    let d = tempfile::tempdir().unwrap();
    gen(d.path(), "blobs", &["--d", "2", "--n", "50", "--k", "3"]);
    let file = format!("file={}", d.path().display());
    let out = stdout(&dlg(&[
        "run",
        &fixture("kmeans"),
        "--arg",
        "iters=3",
        "--arg",
        "numCenter=3",
        "--arg",
        &file,
        "--nranks",
        "2",
        "--fusion-report",
        "--format",
        "json",
    ]));
    let v = assert_valid("run", &out);
    assert!(
        v["fusion_report"]["parfors_after"].as_u64().unwrap() <= v["fusion_report"]["parfors_before"].as_u64().unwrap()
    );
}

#[test]
fn failure_then_restart_gives_the_uninterrupted_result() {
    let d = tempfile::tempdir().unwrap();
    let ck = tempfile::tempdir().unwrap();
    gen(d.path(), "labeled-linear", &["--d", "3", "--n", "40"]);
    let file = format!("file={}", d.path().display());
    let ckd = ck.path().to_str().unwrap();
    let common = ["--arg", "iters=10", "--arg", &file, "--nranks", "2"];
    let plain = stdout(&dlg(&[&["run", &fixture("logistic_regression")][..], &common].concat()));
    // Zero-cost estimate is rejected by the interval formula, so use a tiny
    // one with a tiny mtbf: every loop visit after the first checkpoints.
    let ck_flags = ["--checkpoint-dir", ckd, "--mtbf", "1e-9", "--ckpt-cost-estimate", "1e-9"];
    let failed =
        dlg(&[&["run", &fixture("logistic_regression")][..], &common, &ck_flags, &["--fail-at-iteration", "5"]]
            .concat());
    assert_eq!(failed.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&failed.stderr).contains("injected failure"));
    let resumed = stdout(&dlg(&[&["restart", &fixture("logistic_regression")][..], &common, &ck_flags].concat()));
    assert!(resumed.starts_with("# resumed after iteration"), "{resumed}");
    let values: String = resumed.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    assert_eq!(values, plain);
}

#[test]
fn compile_dumps() {
    let f = fixture("logistic_regression");
    let dist = stdout(&dlg(&["compile", &f, "--dump-dist"]));
    assert!(dist.contains("w "));
    for stage in ["lowering", "optimizer", "distributed"] {
        let ir = stdout(&dlg(&["compile", &f, "--dump-after", stage]));
        assert!(ir.starts_with("(function logistic_regression"), "{stage}");
    }
    let spmd = stdout(&dlg(&["compile", &f, "--emit-spmd-source"]));
    assert!(spmd.contains("allreduce!"));
    let ck = stdout(&dlg(&["compile", &f, "--checkpoint", "--dump-after", "distributed"]));
    assert!(ck.contains("(checkpoint ") && ck.contains("checkpoint-cleanup"));
    let j = stdout(&dlg(&["compile", &f, "--dump-dist", "--fusion-report", "--emit-spmd-source", "--format", "json"]));
    assert_valid("compile", &j);
}

#[test]
fn dump_goes_to_out_file() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("table.txt");
    let o = dlg(&["analyze", &fixture("kmeans"), "--out", p.to_str().unwrap()]);
    assert!(stdout(&o).is_empty());
    assert!(std::fs::read_to_string(p).unwrap().contains("centroids"));
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let j = stdout(&dlg(&[
        "gen-data",
        "labeled-linear",
        "--dir",
        a.path().to_str().unwrap(),
        "--d",
        "10",
        "--n",
        "4096",
        "--format",
        "json",
    ]));
    assert_valid("gen-data", &j);
    stdout(&dlg(&["gen-data", "labeled-linear", "--dir", b.path().to_str().unwrap(), "--d", "10", "--n", "4096"]));
    for f in ["points.dat", "labels.dat"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let run = |dir: &Path, seed: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_dlg"));
        c.args(["gen-data", "gaussian", "--dir", dir.to_str().unwrap(), "--d", "2", "--n", "8"]);
        match seed {
            Some(s) => c.env("DLG_SEED", s),
            None => c.env_remove("DLG_SEED"),
        };
        assert!(c.output().unwrap().status.success());
        std::fs::read(dir.join("points.dat")).unwrap()
    };
    assert_ne!(run(a.path(), Some("7")), run(b.path(), None));
    assert_eq!(run(a.path(), Some("7")), run(b.path(), Some("7")));
}
