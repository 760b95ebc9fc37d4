//! `dlg`: compile, analyze and run programs of the array language.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use dlg_core::analysis::{analyze, dump_table, explain, DistEnv};
use dlg_core::datagen::{generate, Generator};
use dlg_core::distributed::emit_spmd_source;
use dlg_core::ir::text::print_function;
use dlg_core::ir::{FunctionIR, Type};
use dlg_core::pipeline::{lower_source, optimize_source, resilient_source, spmd_source};
use dlg_core::runtime::{run_sequential, run_spmd, CheckpointConfig, Clock, Outputs, RunConfig, Value, DEFAULT_SEED};
use dlg_core::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "dlg", version, about = "Auto-parallelizing compiler and SPMD simulator for a small array language")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Output format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write output here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    Lowering,
    Optimizer,
    Distributed,
}

#[derive(Subcommand)]
enum Command {
    /// Print the inferred distribution of every array and parfor.
    Analyze { file: PathBuf },
    /// Run every pass and print the requested dumps.
    Compile {
        file: PathBuf,
        /// Distribution table with the cause of each REP.
        #[arg(long)]
        dump_dist: bool,
        /// IR text after the given stage.
        #[arg(long, value_enum)]
        dump_after: Option<Stage>,
        /// Fusion report as JSON.
        #[arg(long)]
        fusion_report: bool,
        /// Readable per-rank pseudo-source.
        #[arg(long)]
        emit_spmd_source: bool,
        /// Insert checkpointing into the iteration loop before distribution.
        #[arg(long)]
        checkpoint: bool,
    },
    /// Compile and execute.
    Run(RunArgs),
    /// Execute the restart variant, resuming from the latest checkpoint.
    Restart(RunArgs),
    /// Why a variable got its distribution.
    Explain { file: PathBuf, var: String },
    /// Write a synthetic dataset.
    GenData(GenArgs),
}

#[derive(Args)]
struct RunArgs {
    file: PathBuf,
    /// Number of simulated ranks.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    nranks: u32,
    #[arg(long, env = "DLG_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Entry-function argument, `name=value`; repeatable.
    #[arg(long = "arg", value_name = "NAME=VALUE")]
    args: Vec<String>,
    /// Interpret the unoptimized IR on one rank instead.
    #[arg(long, conflicts_with = "nranks")]
    sequential: bool,
    /// Print the fusion report with the results.
    #[arg(long)]
    fusion_report: bool,
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Mean time between failures in seconds.
    #[arg(long, default_value_t = 3600.0)]
    mtbf: f64,
    /// Initial checkpoint cost estimate in seconds.
    #[arg(long, default_value_t = 1.0)]
    ckpt_cost_estimate: f64,
    /// Abort when the iteration loop is about to start this iteration.
    #[arg(long)]
    fail_at_iteration: Option<i64>,
}

#[derive(Args)]
struct GenArgs {
    #[arg(value_enum)]
    kind: GenKind,
    /// Output directory.
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    d: usize,
    #[arg(long, default_value_t = 4096)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, default_value_t = 256)]
    m: usize,
    #[arg(long, env = "DLG_SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum GenKind {
    Gaussian,
    LabeledLinear,
    Linear,
    Blobs,
    Density,
}

fn read_source(p: &PathBuf) -> Result<String> {
    std::fs::read_to_string(p).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::io(format!("file not found: {}", p.display())),
        _ => Error::io(format!("{}: {e}", p.display())),
    })
}

fn table_json(f: &FunctionIR, env: &DistEnv) -> Json {
    let row = |name: String, kind: &str, d: String| {
        let cause = env.primary_cause(&name);
        json!({
            "name": name,
            "kind": kind,
            "distribution": d,
            "cause": cause.map(|p| p.cause.to_string()),
            "span": cause.map(|p| p.span.to_string()),
        })
    };
    let mut rows: Vec<Json> = env.arrays.iter().map(|(a, d)| row(a.clone(), "array", d.to_string())).collect();
    rows.extend(env.parfors.iter().map(|(p, d)| row(p.to_string(), "parfor", d.to_string())));
    json!({ "function": f.name, "sweeps": env.sweeps, "entries": rows })
}

fn parse_args(f: &FunctionIR, raw: &[String]) -> Result<Vec<(String, Value)>> {
    let user = |m: String| Error::new(ErrorKind::Runtime, None, m);
    let mut out = Vec::new();
    for a in raw {
        let (name, v) = a.split_once('=').ok_or_else(|| user(format!("argument `{a}` is not NAME=VALUE")))?;
        let p = f
            .params
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| user(format!("`{}` has no parameter `{name}`", f.name)))?;
        let value = if p.ty == Type::Str {
            Value::Str(v.to_string())
        } else {
            Value::Scalar(v.parse().map_err(|_| user(format!("argument `{name}` expects a number, got `{v}`")))?)
        };
        out.push((name.to_string(), value));
    }
    if let Some(p) = f.params.iter().find(|p| !out.iter().any(|(n, _)| *n == p.name)) {
        return Err(user(format!("missing argument `{}` (pass --arg {}=...)", p.name, p.name)));
    }
    Ok(out)
}

fn value_text(v: &Value) -> String {
    match v {
        Value::Scalar(x) => format!("{x:?}"),
        Value::Str(s) => format!("{s:?}"),
        Value::Array { dims, data } => {
            let d: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
            let xs: Vec<String> = data.iter().map(|x| format!("{x:?}")).collect();
            format!("{} array [{}]", d.join("x"), xs.join(", "))
        }
    }
}

fn run(a: &RunArgs, restart: bool, fmt: Format) -> Result<String> {
    let src = read_source(&a.file)?;
    let lowered = lower_source(&src)?;
    let mut cfg = RunConfig { nranks: a.nranks as usize, seed: a.seed, ..RunConfig::default() };
    cfg.args = parse_args(&lowered, &a.args)?.into_iter().collect();
    cfg.fail_at_iteration = a.fail_at_iteration;
    if let Some(dir) = &a.checkpoint_dir {
        cfg.checkpoint = Some(CheckpointConfig {
            dir: dir.clone(),
            mtbf: a.mtbf,
            cost_estimate: a.ckpt_cost_estimate,
            clock: Clock::wall(),
        });
    } else if restart {
        return Err(Error::new(ErrorKind::Checkpoint, None, "restart needs --checkpoint-dir"));
    }
    let (outputs, report) = if a.sequential {
        if restart {
            return Err(Error::new(
                ErrorKind::Checkpoint,
                None,
                "restart runs the compiled program; drop --sequential",
            ));
        }
        (run_sequential(&lowered, &cfg)?, None)
    } else if cfg.checkpoint.is_some() {
        let r = resilient_source(&src)?;
        let p = if restart { &r.restart } else { &r.checkpointed };
        (run_spmd(p, &cfg)?, Some(r.optimized.report))
    } else {
        let (o, p) = spmd_source(&src)?;
        (run_spmd(&p, &cfg)?, Some(o.report))
    };
    let report = report.filter(|_| a.fusion_report);
    Ok(match fmt {
        Format::Json => {
            let mut j = outputs_json(&lowered.name, a.nranks, &outputs);
            if let Some(r) = report {
                j["fusion_report"] = serde_json::to_value(r).expect("serializable");
            }
            format!("{j:#}\n")
        }
        Format::Text => {
            let mut s = String::new();
            for w in &outputs.warnings {
                eprintln!("warning: {w}");
            }
            if let Some(it) = outputs.stats.restored_from {
                let _ = writeln!(s, "# resumed after iteration {it}");
            }
            for (n, v) in &outputs.values {
                let _ = writeln!(s, "{n} = {}", value_text(v));
            }
            if let Some(r) = report {
                let _ = writeln!(s, "{:#}", serde_json::to_value(r).expect("serializable"));
            }
            s
        }
    })
}

fn outputs_json(name: &str, nranks: u32, o: &Outputs) -> Json {
    let values: Vec<Json> = o.values.iter().map(|(n, v)| json!({ "name": n, "value": v })).collect();
    json!({
        "function": name,
        "nranks": nranks,
        "values": values,
        "warnings": o.warnings,
        "stats": o.stats,
    })
}

fn compile(
    file: &PathBuf,
    dump_dist: bool,
    dump_after: Option<Stage>,
    fusion_report: bool,
    emit: bool,
    checkpoint: bool,
    fmt: Format,
) -> Result<String> {
    let src = read_source(file)?;
    let (o, p) = if checkpoint {
        let r = resilient_source(&src)?;
        (r.optimized, r.checkpointed)
    } else {
        spmd_source(&src)?
    };
    let mut s = String::new();
    let mut j = json!({ "function": o.func.name });
    if dump_dist {
        match fmt {
            Format::Json => j["distributions"] = table_json(&o.lowered, &o.lowered_env),
            Format::Text => s.push_str(&dump_table(&o.lowered_env)),
        }
    }
    if let Some(stage) = dump_after {
        let f = match stage {
            Stage::Lowering => &o.lowered,
            Stage::Optimizer => &o.func,
            Stage::Distributed => &p.func,
        };
        match fmt {
            Format::Json => j["ir"] = Json::String(print_function(f)),
            Format::Text => s.push_str(&print_function(f)),
        }
    }
    if fusion_report {
        let r = serde_json::to_value(&o.report).expect("serializable");
        match fmt {
            Format::Json => j["fusion_report"] = r,
            Format::Text => {
                let _ = writeln!(s, "{r:#}");
            }
        }
    }
    if emit {
        match fmt {
            Format::Json => j["spmd_source"] = Json::String(emit_spmd_source(&p)),
            Format::Text => s.push_str(&emit_spmd_source(&p)),
        }
    }
    if fmt == Format::Json {
        return Ok(format!("{j:#}\n"));
    }
    if s.is_empty() {
        let r = &o.report;
        let _ = writeln!(
            s,
            "{}: {} parfors before fusion, {} after; {} distributed arrays",
            o.func.name,
            r.parfors_before,
            r.parfors_after,
            p.distributed.len()
        );
    }
    Ok(s)
}

fn execute(cli: &Cli) -> Result<String> {
    let fmt = cli.format;
    match &cli.command {
        Command::Analyze { file } => {
            let f = lower_source(&read_source(file)?)?;
            let env = analyze(&f)?;
            Ok(match fmt {
                Format::Json => format!("{:#}\n", table_json(&f, &env)),
                Format::Text => dump_table(&env),
            })
        }
        Command::Compile { file, dump_dist, dump_after, fusion_report, emit_spmd_source, checkpoint } => {
            compile(file, *dump_dist, *dump_after, *fusion_report, *emit_spmd_source, *checkpoint, fmt)
        }
        Command::Run(a) => run(a, false, fmt),
        Command::Restart(a) => run(a, true, fmt),
        Command::Explain { file, var } => {
            let o = optimize_source(&read_source(file)?)?;
            let text = explain(&o.lowered_env, var)?;
            Ok(match fmt {
                Format::Json => format!(
                    "{:#}\n",
                    json!({
                        "var": var,
                        "distribution": o.lowered_env.arrays.get(var).map(|d| d.to_string())
                            .or_else(|| o.lowered_env.parfors.iter().find(|(k, _)| k.to_string() == *var).map(|(_, d)| d.to_string())),
                        "explanation": text,
                    })
                ),
                Format::Text => text,
            })
        }
        Command::GenData(g) => {
            let gen = match g.kind {
                GenKind::Gaussian => Generator::Gaussian { d: g.d, n: g.n },
                GenKind::LabeledLinear => Generator::LabeledLinear { d: g.d, n: g.n },
                GenKind::Linear => Generator::Linear { d: g.d, n: g.n },
                GenKind::Blobs => Generator::Blobs { d: g.d, n: g.n, k: g.k },
                GenKind::Density => Generator::Density { n: g.n, m: g.m },
            };
            let files = generate(&g.dir, gen, g.seed)?;
            let names: Vec<String> = files.iter().map(|p| p.display().to_string()).collect();
            Ok(match fmt {
                Format::Json => format!("{:#}\n", json!({ "generator": gen.name(), "seed": g.seed, "files": names })),
                Format::Text => names.iter().map(|n| format!("{n}\n")).collect(),
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(text) => {
            if let Some(p) = &cli.out {
                if let Err(e) = std::fs::write(p, text) {
                    eprintln!("error[IoError]: {}: {e}", p.display());
                    return ExitCode::from(1);
                }
            } else {
                print!("{text}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.format == Format::Json {
                println!(
                    "{:#}",
                    json!({ "error": { "kind": e.kind.name(), "message": e.message, "span": e.span.map(|s| s.to_string()) } })
                );
            } else {
                eprintln!("error[{}]: {e}", e.kind.name());
            }
            ExitCode::from(if e.kind == ErrorKind::Internal { 2 } else { 1 })
        }
    }
}
