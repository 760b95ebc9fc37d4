mod common;

use std::sync::OnceLock;

use proptest::prelude::*;

use dlg_core::analysis::{analyze, sweep_once, transfer_stmt, DistEnv, Options};
use dlg_core::distributed::partition;
use dlg_core::frontend::ast::*;
use dlg_core::frontend::{parse, print_program};
use dlg_core::ir::text::{expr_text, parse_expr, parse_function, print_function};
use dlg_core::ir::visit::for_each_stmt;
use dlg_core::ir::{self, BinOp, Distribution, FunctionIR, ScalarKind, Span, UnOp};
use dlg_core::pipeline::{optimize_source, spmd_source};
use dlg_core::runtime::{bit_identical, datafile, run_spmd, young_interval};
use dlg_core::ErrorKind;

// ---- surface syntax ----

const NAMES: [&str; 7] = ["a", "b", "x", "y", "w", "n", "idx"];

fn name() -> impl Strategy<Value = String> {
    prop::sample::select(&NAMES[..]).prop_map(str::to_string)
}

fn z(k: ExprKind) -> Expr {
    Expr::new(k, Span::default())
}

fn leaf() -> impl Strategy<Value = Expr> {
    prop_oneof![
        (0i64..1000).prop_map(|v| z(ExprKind::Int(v))),
        prop_oneof![(0u32..4000).prop_map(|k| k as f64 / 8.0), Just(1e-7), Just(2.5e20)]
            .prop_map(|v| z(ExprKind::Float(v))),
        "[a-z \"\\\\]{0,6}".prop_map(|s| z(ExprKind::Str(s))),
        any::<bool>().prop_map(|b| z(ExprKind::Bool(b))),
        name().prop_map(|n| z(ExprKind::Ident(n))),
    ]
}

const OPS: [BinOp; 11] = [
    BinOp::Add,
    BinOp::Sub,
    BinOp::Mul,
    BinOp::Div,
    BinOp::Pow,
    BinOp::Eq,
    BinOp::Ne,
    BinOp::Lt,
    BinOp::Le,
    BinOp::Gt,
    BinOp::Ge,
];

fn surface_expr() -> impl Strategy<Value = Expr> {
    leaf().prop_recursive(4, 32, 3, |inner| {
        let index = prop_oneof![Just(Index::All), inner.clone().prop_map(Index::Expr)];
        let gen = (name(), inner.clone(), inner.clone()).prop_map(|(var, lo, hi)| Generator {
            var,
            lo,
            hi,
            span: Span::default(),
        });
        prop_oneof![
            (prop::sample::select(&OPS[..]), any::<bool>(), inner.clone(), inner.clone())
                .prop_map(|(op, dot, a, b)| z(ExprKind::Binary(BinSym { op, dot }, Box::new(a), Box::new(b)))),
            (prop::sample::select(&[UnOp::Neg, UnOp::Not][..]), inner.clone())
                .prop_map(|(op, a)| z(ExprKind::Unary(op, Box::new(a)))),
            inner.clone().prop_map(|a| z(ExprKind::Transpose(Box::new(a)))),
            (prop::sample::select(&["f", "g", "sum"][..]), prop::collection::vec(inner.clone(), 0..3))
                .prop_map(|(f, args)| z(ExprKind::Call(f.to_string(), args))),
            (name(), prop::collection::vec(index, 1..3))
                .prop_map(|(b, idx)| z(ExprKind::Index(Box::new(z(ExprKind::Ident(b))), idx))),
            (
                prop::option::of(prop::sample::select(&[ScalarKind::F64, ScalarKind::I64, ScalarKind::Bool][..])),
                inner,
                prop::collection::vec(gen, 1..3)
            )
                .prop_map(|(elem, body, gens)| z(ExprKind::Comprehension {
                    elem,
                    body: Box::new(body),
                    gens
                })),
        ]
    })
}

fn stmt() -> impl Strategy<Value = Stmt> {
    let s = |k| Stmt { kind: k, span: Span::default() };
    let simple =
        prop_oneof![
            (prop::collection::vec(name(), 1..3), surface_expr())
                .prop_map(move |(targets, value)| s(StmtKind::Assign { targets, op: AssignOp::Set, value })),
            (
                name(),
                prop::sample::select(&[AssignOp::Add, AssignOp::Sub, AssignOp::Mul, AssignOp::Div][..]),
                surface_expr()
            )
                .prop_map(move |(t, op, value)| s(StmtKind::Assign { targets: vec![t], op, value })),
            (prop::sample::select(&["f", "g"][..]), prop::collection::vec(surface_expr(), 0..3))
                .prop_map(move |(f, a)| s(StmtKind::Expr(z(ExprKind::Call(f.to_string(), a))))),
            name().prop_map(move |a| s(StmtKind::Partitioned(a))),
        ];
    simple.prop_recursive(2, 12, 3, move |inner| {
        prop_oneof![(name(), surface_expr(), surface_expr(), prop::collection::vec(inner, 0..3))
            .prop_map(move |(var, lo, hi, body)| s(StmtKind::For { var, lo, hi, body })),]
    })
}

fn program() -> impl Strategy<Value = Program> {
    (
        prop::collection::vec(name(), 0..3),
        prop::collection::vec(stmt(), 0..5),
        prop::collection::vec(surface_expr(), 0..3),
        prop::collection::vec(prop::sample::select(&["ext_a", "ext_b"][..]), 0..2),
    )
        .prop_map(|(params, mut body, ret, externs)| {
            body.push(Stmt { kind: StmtKind::Return(ret), span: Span::default() });
            Program {
                externs: externs.into_iter().map(|e| (e.to_string(), Span::default())).collect(),
                func: Function {
                    name: "main".into(),
                    params: params
                        .into_iter()
                        .map(|n| ParamDecl { name: n, ty: None, span: Span::default() })
                        .collect(),
                    body,
                    span: Span::default(),
                },
            }
        })
}

proptest! {
    #[test]
    fn surface_print_then_parse_is_identity(p in program()) {
        let text = print_program(&p);
        let mut back = parse(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        strip_spans(&mut back);
        prop_assert_eq!(back, p, "{}", text);
    }
}

#[test]
fn fixtures_survive_print_and_parse() {
    for name in common::FIXTURES {
        let mut a = parse(&common::source(name)).unwrap();
        let mut b = parse(&print_program(&a)).unwrap();
        strip_spans(&mut a);
        strip_spans(&mut b);
        assert_eq!(a, b, "{name}");
    }
}

// ---- IR text ----

fn ir_expr() -> impl Strategy<Value = ir::Expr> {
    let leaf = prop_oneof![
        (-50i64..50).prop_map(ir::Expr::i64),
        prop_oneof![(-4000i32..4000).prop_map(|k| k as f64 / 8.0), Just(1e-9), Just(-3.25e18), Just(0.1)]
            .prop_map(ir::Expr::f64),
        any::<bool>().prop_map(|b| ir::Expr::Lit(ir::Lit::Bool(b))),
        name().prop_map(ir::Expr::var),
        Just(ir::Expr::var("tmp#3")),
    ];
    leaf.prop_recursive(4, 32, 3, |inner| {
        prop_oneof![
            (prop::sample::select(&BinOp::ALL[..]), inner.clone(), inner.clone())
                .prop_map(|(op, a, b)| ir::Expr::bin(op, a, b)),
            (
                prop::sample::select(&[UnOp::Neg, UnOp::Not, UnOp::Exp, UnOp::Log, UnOp::Sqrt, UnOp::Abs][..]),
                inner.clone()
            )
                .prop_map(|(op, a)| ir::Expr::un(op, a)),
            (inner.clone(), inner.clone(), inner.clone()).prop_map(|(c, a, b)| ir::Expr::select(c, a, b)),
            (name(), prop::collection::vec(inner, 1..3)).prop_map(|(a, i)| ir::Expr::read(a, i)),
        ]
    })
}

proptest! {
    #[test]
    fn ir_expr_text_round_trips(e in ir_expr()) {
        let t = expr_text(&e);
        prop_assert_eq!(parse_expr(&t).map_err(|err| TestCaseError::fail(format!("{err:?}: {t}")))?, e);
    }
}

#[test]
fn ir_functions_round_trip_at_every_stage() {
    for name in common::FIXTURES {
        let o = optimize_source(&common::source(name)).unwrap();
        let mut fs = vec![o.lowered, o.func];
        if let Ok((_, p)) = spmd_source(&common::source(name)) {
            fs.push(p.func);
        }
        for f in fs {
            let t = print_function(&f);
            let back = parse_function(&t).unwrap_or_else(|e| panic!("{name}: {e:?}\n{t}"));
            assert_eq!(print_function(&back), t, "{name}");
            assert_eq!(back.body, f.body, "{name}");
        }
    }
}

// ---- analysis monotonicity ----

fn analysed_functions() -> &'static Vec<FunctionIR> {
    static FS: OnceLock<Vec<FunctionIR>> = OnceLock::new();
    FS.get_or_init(|| {
        common::FIXTURES
            .iter()
            .flat_map(|n| {
                let o = optimize_source(&common::source(n)).unwrap();
                [o.lowered, o.func]
            })
            .collect()
    })
}

fn random_env(f: &FunctionIR, picks: &[u8]) -> DistEnv {
    let mut env = analyze(f).unwrap();
    let mut k = 0;
    let mut next = || {
        let d = Distribution::ALL[picks[k % picks.len()] as usize % 3];
        k += 1;
        d
    };
    for d in env.arrays.values_mut() {
        *d = next();
    }
    for d in env.parfors.values_mut() {
        *d = next();
    }
    env
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn every_transfer_only_moves_down(fi in 0usize..12, picks in prop::collection::vec(0u8..3, 1..64)) {
        let f = &analysed_functions()[fi];
        let env = random_env(f, &picks);
        let opts = Options::default();
        let mut ok = true;
        for_each_stmt(&f.body, &mut |s| {
            let mut e = env.clone();
            transfer_stmt(&mut e, f, s, &opts);
            ok &= e.le(&env);
        });
        prop_assert!(ok);
        let mut e = env.clone();
        sweep_once(&mut e, f, &opts);
        prop_assert!(e.le(&env));
    }
}

// ---- partitions and block I/O ----

#[test]
fn partition_is_balanced_and_exhaustive() {
    for total in 0..=64 {
        for p in 1..=8 {
            let parts: Vec<(usize, usize)> = (0..p).map(|r| partition(total, p, r)).collect();
            assert_eq!(parts.iter().map(|x| x.1).sum::<usize>(), total);
            let max = parts.iter().map(|x| x.1).max().unwrap();
            let min = parts.iter().map(|x| x.1).min().unwrap();
            assert!(max - min <= 1, "{total}/{p}");
            let mut next = 0;
            for (s, n) in parts {
                assert_eq!(s, next);
                next += n;
            }
        }
    }
}

/// Every way of splitting `n` into `k` ordered non-negative parts.
fn compositions(n: usize, k: usize) -> Vec<Vec<usize>> {
    if k == 1 {
        return vec![vec![n]];
    }
    (0..=n)
        .flat_map(|first| {
            compositions(n - first, k - 1).into_iter().map(move |mut rest| {
                rest.insert(0, first);
                rest
            })
        })
        .collect()
}

#[test]
fn block_reads_concatenate_to_the_whole_file() {
    let d = tempfile::tempdir().unwrap();
    let p = d.path().join("m.dat");
    let data: Vec<f64> = (0..20).map(|k| k as f64 * 1.5 - 3.0).collect();
    datafile::write(&p, ScalarKind::F64, &[2, 10], &data).unwrap();
    let (_, full) = datafile::read_all(&p).unwrap();
    let splits = compositions(10, 4);
    assert_eq!(splits.len(), 286);
    for sizes in splits {
        let mut got = Vec::new();
        let mut start = 0;
        for n in sizes {
            let (h, block) = datafile::read_block(&p, start, n).unwrap();
            assert_eq!(h.dims, vec![2, 10]);
            assert_eq!(block.len(), 2 * n);
            got.extend(block);
            start += n;
        }
        assert_eq!(got, full);
    }
}

proptest! {
    #[test]
    fn datafile_round_trips(
        dims in prop::collection::vec(0usize..5, 1..4),
        seed in any::<u64>(),
        kind in prop::sample::select(&[ScalarKind::F64, ScalarKind::I64, ScalarKind::Bool][..]),
    ) {
        let n: usize = dims.iter().product();
        let mut s = seed;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                match kind {
                    ScalarKind::F64 => f64::from_bits(s >> 2) ,
                    ScalarKind::I64 => ((s >> 11) as i64 - (1 << 52)) as f64,
                    ScalarKind::Bool => (s >> 63) as f64,
                }
            })
            .collect();
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("a.dat");
        datafile::write(&p, kind, &dims, &data).unwrap();
        let (h, back) = datafile::read_all(&p).unwrap();
        prop_assert_eq!(h.dims, dims);
        prop_assert_eq!(h.elem, kind);
        prop_assert_eq!(back.len(), data.len());
        for (a, b) in back.iter().zip(&data) {
            prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
        }
    }
}

// ---- runtime ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn a_skipped_collective_is_always_detected(nranks in 2usize..5, rank_pick in 0usize..4, nth in 1usize..12) {
        let (_, p) = spmd_source(&common::source("logistic_regression")).unwrap();
        let d = tempfile::tempdir().unwrap();
        let mut cfg = common::setup("logistic_regression", d.path(), 4).nranks(nranks);
        let clean = run_spmd(&p, &cfg).unwrap();
        cfg.skip_collective = Some((rank_pick % nranks, nth));
        match run_spmd(&p, &cfg) {
            Err(e) => prop_assert_eq!(e.kind, ErrorKind::CollectiveMismatch, "{}", e.message),
            // Only possible when the rank never reaches its nth collective.
            Ok(out) => {
                prop_assert!(nth > clean.stats.collectives);
                prop_assert!(bit_identical(&clean, &out));
            }
        }
    }
}

#[test]
fn identical_runs_are_bit_identical() {
    for name in ["logistic_regression", "kmeans", "kernel_density"] {
        let (_, p) = spmd_source(&common::source(name)).unwrap();
        let d = tempfile::tempdir().unwrap();
        let cfg = common::setup(name, d.path(), 9).nranks(3);
        assert!(bit_identical(&run_spmd(&p, &cfg).unwrap(), &run_spmd(&p, &cfg).unwrap()), "{name}");
    }
}

proptest! {
    #[test]
    fn young_interval_scales_with_the_square_root(c in 1e-3f64..1e3, m in 1e-3f64..1e6) {
        let a = young_interval(c, m).unwrap();
        prop_assert!((a - (2.0 * c * m).sqrt()).abs() <= 1e-12 * a);
        let b = young_interval(c, 2.0 * m).unwrap();
        prop_assert!((b / a - 2f64.sqrt()).abs() <= 1e-12);
        let b = young_interval(2.0 * c, m).unwrap();
        prop_assert!((b / a - 2f64.sqrt()).abs() <= 1e-12);
    }
}
