//! Command-line surface over the pipeline.
//!
//! Exit codes: 0 ok, 1 usage or input error, 2 verification failed,
//! 3 architectural equivalence failed.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use statebsd::asm::{assemble, format_program};
use statebsd::isa::{run_single, Program, TraceRecord};
use statebsd::pipeline::{
    bundle_from_json, bundle_to_json, evaluate_suite, report_to_csv, report_to_json, run_pipeline,
    train_bundle, PipelineConfig, SuiteEntry,
};
use statebsd::selector::DepKind;
use statebsd::speculator::{build_examples, verify_speculator, DomainSpec, VerificationOutcome};
use statebsd::superscalar::{compare_reference, run_superscalar, StallReason, SuperscalarConfig};
use statebsd::trace::{from_jsonl, to_jsonl};
use statebsd::workloads::{gen_program, WorkloadKind, WorkloadSpec};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "statebsd", version, about = "MiniRV-16 simulators with learned dependency predictors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a workload program as assembly text.
    Gen(GenArgs),
    /// Run a program on the single-cycle reference model.
    Run(RunArgs),
    /// Train a predictor bundle from traces.
    Train(TrainArgs),
    /// Re-verify a bundle against the oracle derived from traces.
    Verify(VerifyArgs),
    /// Run a program on the superscalar model and check equivalence.
    Simulate(SimulateArgs),
    /// Train on a program suite and emit the evaluation report.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct GenArgs {
    /// random | arith_chain | memcopy | fib | bubble_sort | branch_heavy
    #[arg(long)]
    kind: String,
    #[arg(long)]
    len: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    program: PathBuf,
    /// Only `single` is supported here; use `simulate` for the superscalar.
    #[arg(long, default_value = "single")]
    mode: String,
    /// Write the execution trace as JSON lines.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 400_000)]
    max_steps: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of *.jsonl traces.
    #[arg(long)]
    traces: PathBuf,
    /// Pipeline configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    bundle: PathBuf,
    /// Directory of *.jsonl traces the oracle is rebuilt from.
    #[arg(long)]
    traces: PathBuf,
    /// Enumerate the whole control-bit domain (the default).
    #[arg(long, conflicts_with = "samples")]
    exhaustive: bool,
    /// Check a seeded uniform sample of this size instead.
    #[arg(long)]
    samples: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    program: PathBuf,
    #[arg(long)]
    bundle: PathBuf,
    #[arg(short, default_value_t = 2)]
    p: usize,
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    mem_ports: usize,
    #[arg(long, default_value_t = 1)]
    l_p: u32,
    #[arg(long, default_value_t = 3_200_000)]
    max_cycles: u64,
    /// Proceed even if the bundle carries no verification evidence.
    #[arg(long)]
    allow_unverified: bool,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory of *.mrv programs.
    #[arg(long)]
    suite: PathBuf,
    /// Buffer capacities for the sweep rows.
    #[arg(long, value_delimiter = ',')]
    capacities: Vec<usize>,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap would exit 2; the contract here is 1 for usage.
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Gen(args) => cmd_gen(args),
        Command::Run(args) => cmd_run(args),
        Command::Train(args) => cmd_train(args),
        Command::Verify(args) => cmd_verify(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn parse_kind(s: &str) -> Result<WorkloadKind> {
    Ok(match s {
        "random" => WorkloadKind::Random,
        "arith_chain" => WorkloadKind::ArithChain,
        "memcopy" => WorkloadKind::Memcopy,
        "fib" => WorkloadKind::Fib,
        "bubble_sort" => WorkloadKind::BubbleSort,
        "branch_heavy" => WorkloadKind::BranchHeavy,
        other => bail!("unknown workload kind `{other}`"),
    })
}

fn load_program(path: &Path) -> Result<Program> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    assemble(&text).map_err(|e| anyhow!("assembling {}: {e}", path.display()))
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn load_traces(dir: &Path) -> Result<Vec<Vec<TraceRecord>>> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "jsonl"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        bail!("no *.jsonl traces in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading {}", p.display()))?;
            from_jsonl(&text).map_err(|e| anyhow!("{}: {e}", p.display()))
        })
        .collect()
}

fn cmd_gen(args: GenArgs) -> Result<ExitCode> {
    let spec = WorkloadSpec { kind: parse_kind(&args.kind)?, len: args.len, seed: args.seed };
    let program = gen_program(&spec)?;
    std::fs::write(&args.output, format_program(&program))?;
    println!(
        "wrote {} ({} instructions, {} data words)",
        args.output.display(),
        program.instructions.len(),
        program.data_init.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_run(args: RunArgs) -> Result<ExitCode> {
    if args.mode != "single" {
        bail!("`run` supports --mode single; use `simulate` for the superscalar model");
    }
    let program = load_program(&args.program)?;
    let out = run_single(&program, args.max_steps)?;
    if let Some(path) = &args.trace {
        std::fs::write(path, to_jsonl(&out.trace))?;
    }
    println!(
        "retired {} instructions in {} cycles, cpi {} ({:.4})",
        out.instructions,
        out.cycles,
        out.cpi(),
        out.cycles as f64 / out.instructions.max(1) as f64
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let cfg = load_config(&args.config)?;
    let traces = load_traces(&args.traces)?;
    let (trained, _tables) = train_bundle(&traces, &cfg)?;
    std::fs::write(&args.output, bundle_to_json(&trained))?;
    for kind in [DepKind::Pc, DepKind::Gpr, DepKind::Mem] {
        let sub = trained.bundle.sub(kind);
        let v = sub.verification.as_ref().expect("training verifies");
        println!(
            "{:?}: {} (checked {} inputs, {} refinement rounds)",
            kind, v.status, v.checked, v.counterexample_rounds
        );
    }
    println!("wrote {}", args.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let bundle = bundle_from_json(&std::fs::read_to_string(&args.bundle)?)?;
    let traces = load_traces(&args.traces)?;
    let domain = match args.samples {
        Some(n) => DomainSpec::Sampled { samples: n, seed: args.seed },
        None => DomainSpec::Exhaustive,
    };
    let mut all_ok = true;
    for kind in [DepKind::Pc, DepKind::Gpr, DepKind::Mem] {
        let table = build_examples(&traces, kind)?;
        let outcome = verify_speculator(&bundle.sub(kind).speculator, &table, domain)?;
        match outcome {
            VerificationOutcome::Verified { checked } => {
                println!("{kind:?}: verified over {checked} inputs");
            }
            VerificationOutcome::Counterexamples(bad) => {
                all_ok = false;
                println!("{kind:?}: {} counterexamples (first: {:#08x})", bad.len(), bad[0].input);
            }
        }
    }
    Ok(if all_ok { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn kind_label(kind: DepKind) -> &'static str {
    match kind {
        DepKind::Pc => "pc",
        DepKind::Gpr => "gpr",
        DepKind::Mem => "mem",
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<ExitCode> {
    let program = load_program(&args.program)?;
    let bundle = bundle_from_json(&std::fs::read_to_string(&args.bundle)?)?;
    if !args.allow_unverified {
        for (kind, sub) in
            [(DepKind::Pc, &bundle.pc), (DepKind::Gpr, &bundle.gpr), (DepKind::Mem, &bundle.mem)]
        {
            if !sub.is_verified() {
                eprintln!("bundle's {kind:?} sub-predictor is not verified (use --allow-unverified to override)");
                return Ok(ExitCode::from(2));
            }
        }
    }
    let config = SuperscalarConfig { p: args.p, mem_ports: args.mem_ports, l_p: args.l_p };
    let reference = run_single(&program, args.max_cycles)?;
    let result = match run_superscalar(&program, &bundle, &config, args.max_cycles) {
        Ok(r) => r,
        Err(e @ statebsd::superscalar::SimError::PredictorUnsound(_)) => {
            eprintln!("equivalence failed: {e}");
            return Ok(ExitCode::from(3));
        }
        Err(e) => return Err(e.into()),
    };
    let eq = compare_reference(&reference, &result);
    let coverage: BTreeMap<&str, serde_json::Value> = [
        (DepKind::Pc, StallReason::Control),
        (DepKind::Gpr, StallReason::GprRaw),
        (DepKind::Mem, StallReason::MemRaw),
    ]
    .into_iter()
    .map(|(kind, stall)| {
        let used = result.predictions_by_kind.get(&kind).copied().unwrap_or(0);
        let missed = result.stalls.get(&stall).copied().unwrap_or(0);
        let cov = if used + missed == 0 { 0.0 } else { used as f64 / (used + missed) as f64 };
        (kind_label(kind), serde_json::json!({ "used": used, "missed": missed, "coverage": cov }))
    })
    .collect();
    let report = serde_json::json!({
        "program": args.program.display().to_string(),
        "p": args.p,
        "cycles": result.cycles,
        "instructions": result.instructions,
        "cpi": [result.cpi().numer().clone(), result.cpi().denom().clone()],
        "cpi_single": [reference.cpi().numer().clone(), reference.cpi().denom().clone()],
        "coverage": coverage,
        "stalls": result.stalls.iter().map(|(k, v)| (format!("{k:?}"), *v)).collect::<BTreeMap<_, _>>(),
        "equivalence": if eq.ok() { serde_json::json!("ok") } else { serde_json::to_value(&eq.diffs).unwrap() },
    });
    if let Some(path) = &args.report {
        std::fs::write(path, serde_json::to_string_pretty(&report)? + "\n")?;
    }
    println!(
        "p={} cycles={} instructions={} cpi={} single-cpi={} equivalence={}",
        args.p,
        result.cycles,
        result.instructions,
        result.cpi(),
        reference.cpi(),
        if eq.ok() { "ok" } else { "DIVERGED" }
    );
    Ok(if eq.ok() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn cmd_sweep(args: SweepArgs) -> Result<ExitCode> {
    let mut cfg = load_config(&args.config)?;
    if !args.capacities.is_empty() {
        cfg.sweep_capacities = args.capacities.clone();
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&args.suite)
        .with_context(|| format!("reading {}", args.suite.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map_or(false, |x| x == "mrv"))
        .collect();
    paths.sort();
    let (trained, report) = if paths.is_empty() {
        // No programs given: fall back to the config's generated suite.
        run_pipeline(&cfg)?
    } else {
        let programs: Vec<(SuiteEntry, Program)> = paths
            .iter()
            .map(|p| {
                let program = load_program(p)?;
                let name = p.file_stem().and_then(|s| s.to_str()).unwrap_or("program");
                Ok((SuiteEntry::from_file(name, &program), program))
            })
            .collect::<Result<_>>()?;
        let traces: Vec<Vec<TraceRecord>> = programs
            .iter()
            .map(|(_, p)| Ok(run_single(p, cfg.max_cycles)?.trace))
            .collect::<Result<_>>()?;
        let (trained, tables) = train_bundle(&traces, &cfg)?;
        let report = evaluate_suite(&trained, &tables, &programs, &cfg)?;
        (trained, report)
    };
    std::fs::write(&args.csv, report_to_csv(&report))?;
    if let Some(path) = &args.json {
        std::fs::write(path, report_to_json(&report))?;
    }
    let _ = trained;
    println!("wrote {}", args.csv.display());
    Ok(ExitCode::SUCCESS)
}
