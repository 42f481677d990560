//! `coref-adj`: adjudicate coreference annotations from the command line.
//!
//! Exit codes: 0 optimal, 2 feasible but not proven optimal (budget hit or
//! interrupted), 3 infeasible enforcement, 1 usage or input error.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coref_adjudication::benchgen::{
    generate_instance, run_benchmark, BenchInstance, BenchSettings, GeneratorParams, Preset, TrackingAllocator,
};
use coref_adjudication::conll::{parse_annotation, serialize_result, AnnotatedDocument, Annotation};
use coref_adjudication::instance::export_asp_facts;
use coref_adjudication::oracle::{brute_force_optimum, OracleResult};
use coref_adjudication::pipeline::{adjudicate_documents, readjudicate_merged, AdjudicationRun};
use coref_adjudication::{build_instance, ForcedMode, Objective, ObjectiveTag, SolverConfig, Status, Strategy};
use coref_adjudication_service::ServiceConfig;

#[global_allocator]
static ALLOC: TrackingAllocator = TrackingAllocator;

#[derive(Parser)]
#[command(
    name = "coref-adj",
    version,
    about = "Cost-optimal adjudication of coreference annotations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Merge annotator files into a review file with a result column.
    Adjudicate(AdjudicateArgs),
    /// Re-solve a reviewed merged file, keeping its `=` fields.
    Readjudicate(ReadjudicateArgs),
    /// Time both strategies on generated or given instances.
    Bench(BenchArgs),
    /// Write a synthetic document as one file per annotator.
    Generate(GenerateArgs),
    /// Print the instance as logic-program facts.
    ExportAsp(ExportArgs),
    /// Run the HTTP/JSON service.
    Serve(ServeArgs),
    /// Exhaustive optimum for small instances.
    #[command(hide = true)]
    Oracle(OracleArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputMode {
    Merged,
    Result,
}

#[derive(Args)]
struct SolveArgs {
    /// u, ua, v or va.
    #[arg(long, default_value = "v")]
    objective: ObjectiveTag,
    /// mm (link inclusion) or cm (chain assignment).
    #[arg(long, default_value = "mm")]
    strategy: Strategy,
    /// Time budget in seconds.
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
    /// Report up to K optimal solutions on stderr.
    #[arg(long, default_value_t = 0)]
    enumerate: usize,
    #[arg(long, value_enum, default_value = "merged")]
    output: OutputMode,
    /// Output file; stdout when omitted.
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AdjudicateArgs {
    /// One CoNLL file per annotator.
    files: Vec<PathBuf>,
    /// Comma-separated annotator ids; file stems by default.
    #[arg(long, value_delimiter = ',')]
    annotators: Option<Vec<String>>,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct ReadjudicateArgs {
    /// Merged review file.
    file: PathBuf,
    /// Number of annotator columns when the file has no `#columns` header.
    #[arg(long)]
    annotator_columns: Option<usize>,
    /// Do not count the enforced result as an extra annotator.
    #[arg(long)]
    no_forced_annotator: bool,
    #[command(flatten)]
    solve: SolveArgs,
}

#[derive(Args)]
struct BenchArgs {
    /// Directories with one instance each (all `*.conll` files inside).
    dirs: Vec<PathBuf>,
    /// Generate instances from a preset instead.
    #[arg(long)]
    preset: Option<Preset>,
    /// Generated instances.
    #[arg(long, default_value_t = 3)]
    count: u64,
    /// First generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "mm,cm")]
    strategies: Vec<Strategy>,
    #[arg(long, value_delimiter = ',', default_value = "u,ua,v,va")]
    objectives: Vec<ObjectiveTag>,
    /// Time budget per run in seconds.
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
    #[arg(long, default_value_t = 1)]
    repeats: usize,
    /// Run instances in parallel; timings and memory then interfere.
    #[arg(long)]
    parallel: bool,
    /// Report file; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value = "ds2")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    annotators: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    boundary_noise: Option<f64>,
    #[arg(long)]
    chain_noise: Option<f64>,
    #[arg(long)]
    drop_rate: Option<f64>,
    /// Output directory; receives `<annotator>.conll` and `truth.conll`.
    #[arg(short = 'o', long = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct ExportArgs {
    /// Annotator files, or one merged file with `--merged`.
    files: Vec<PathBuf>,
    #[arg(long)]
    merged: bool,
    #[arg(short = 'o', long = "out")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long = "serve", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Keep sessions as merged files in this directory.
    #[arg(long)]
    persist: Option<PathBuf>,
    /// Default solve budget in seconds.
    #[arg(long, default_value_t = 300.0)]
    timeout: f64,
}

#[derive(Args)]
struct OracleArgs {
    files: Vec<PathBuf>,
    #[arg(long, default_value = "v")]
    objective: ObjectiveTag,
}

fn seconds(s: f64) -> Result<Duration> {
    if !(s.is_finite() && s > 0.0) {
        bail!("timeout must be a positive number of seconds, got {s}");
    }
    Ok(Duration::from_secs_f64(s))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("cannot write {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn load_annotator_files(files: &[PathBuf], ids: Option<&[String]>) -> Result<Vec<AnnotatedDocument>> {
    if let Some(ids) = ids {
        if ids.len() != files.len() {
            bail!("{} annotator ids for {} files", ids.len(), files.len());
        }
    }
    files
        .iter()
        .enumerate()
        .map(|(i, path)| {
            let id = ids.map_or_else(|| stem(path), |ids| ids[i].clone());
            parse_annotation(&read(path)?, &id).with_context(|| format!("{}", path.display()))
        })
        .collect()
}

/// Cancel flag raised by an interrupt signal. The runtime must outlive the
/// solve.
fn interrupt_flag(rt: &tokio::runtime::Runtime) -> Arc<AtomicBool> {
    let flag = Arc::new(AtomicBool::new(false));
    let raised = flag.clone();
    rt.spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("interrupted; returning the best solution so far");
            raised.store(true, Ordering::Relaxed);
        }
    });
    flag
}

fn solver_config(args: &SolveArgs, cancel: Arc<AtomicBool>) -> Result<SolverConfig> {
    Ok(SolverConfig {
        time_budget: Some(seconds(args.timeout)?),
        enumerate_optima_up_to: args.enumerate,
        cancel: Some(cancel),
        ..SolverConfig::with_strategy(args.strategy)
    })
}

fn exit_for(status: Status) -> u8 {
    match status {
        Status::Optimal => 0,
        Status::Feasible | Status::BudgetExhaustedNoSolution => 2,
        Status::Infeasible => 3,
    }
}

fn report(run: &AdjudicationRun, args: &SolveArgs) -> Result<u8> {
    let o = &run.outcome;
    match &o.best {
        Some(best) => {
            let b = best.breakdown;
            eprintln!(
                "{}: cost {} (omitted {}, used {}, unevidenced {}), lower bound {}, {} chains, {:.3} s",
                o.status,
                b.total,
                b.c1,
                b.c2,
                b.c3,
                o.lower_bound,
                best.chains.len(),
                o.stats.elapsed.as_secs_f64()
            );
            if o.bound_limited {
                eprintln!(
                    "note: the result uses {} chains, more than the chain bound {}",
                    best.chains.len(),
                    o.chain_bound
                );
            }
            for (i, opt) in o.optima.iter().enumerate() {
                let links: Vec<String> = opt
                    .link_spans(&run.instance)
                    .iter()
                    .map(|(a, b)| format!("{a}-{b}"))
                    .collect();
                eprintln!("optimum {}: cost {} links {}", i + 1, opt.cost(), links.join(" "));
            }
            let text = match args.output {
                OutputMode::Merged => run.merged_text()?,
                OutputMode::Result => run.result_text()?,
            };
            write_output(args.out.as_deref(), &text)?;
        }
        None if o.status == Status::Infeasible => {
            let w = o.witness.as_ref().expect("infeasible outcomes carry a witness");
            eprintln!("infeasible: {}", w.reason);
            for c in &w.constraints {
                eprintln!("  {}", describe(c));
            }
        }
        None => eprintln!(
            "no solution within the budget; lower bound {} after {:.3} s",
            o.lower_bound,
            o.stats.elapsed.as_secs_f64()
        ),
    }
    Ok(exit_for(o.status))
}

fn describe(c: &coref_adjudication::solver::Constraint) -> String {
    use coref_adjudication::solver::Constraint::*;
    match c {
        ForcedMention { span } => format!("mention {span} is forced"),
        SameChain { first, second } => format!("{first} and {second} must share a chain"),
        DifferentChains { first, second } => format!("{first} and {second} must be in different chains"),
    }
}

fn adjudicate(args: AdjudicateArgs) -> Result<u8> {
    if args.files.len() < 2 {
        bail!(
            "adjudication needs at least two annotator files (u >= 2), got {}",
            args.files.len()
        );
    }
    let docs = load_annotator_files(&args.files, args.annotators.as_deref())?;
    let rt = runtime()?;
    let config = solver_config(&args.solve, interrupt_flag(&rt))?;
    let run = adjudicate_documents(&docs, &Objective::new(args.solve.objective), &config)?;
    report(&run, &args.solve)
}

fn readjudicate(args: ReadjudicateArgs) -> Result<u8> {
    let text = read(&args.file)?;
    let mode = if args.no_forced_annotator {
        ForcedMode::Excluded
    } else {
        ForcedMode::Annotator
    };
    let rt = runtime()?;
    let config = solver_config(&args.solve, interrupt_flag(&rt))?;
    let run = readjudicate_merged(
        &text,
        args.annotator_columns,
        mode,
        &Objective::new(args.solve.objective),
        &config,
    )
    .with_context(|| format!("{}", args.file.display()))?;
    report(&run, &args.solve)
}

fn bench(args: BenchArgs) -> Result<u8> {
    let mut instances = Vec::new();
    for dir in &args.dirs {
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("cannot list {}", dir.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "conll") && stem(p) != "truth")
            .collect();
        files.sort();
        let docs = load_annotator_files(&files, None)?;
        let annotations: Vec<Annotation> = docs.iter().map(|d| d.annotation.clone()).collect();
        let n = coref_adjudication::conll::check_same_tokens(&docs)?;
        instances.push(BenchInstance {
            name: stem(dir),
            instance: build_instance(n, &annotations, None, ForcedMode::Annotator)
                .with_context(|| format!("{}", dir.display()))?,
        });
    }
    if let Some(preset) = args.preset {
        for seed in args.seed..args.seed + args.count {
            let g = generate_instance(&GeneratorParams::preset(preset, seed))?;
            instances.push(BenchInstance {
                name: format!("{preset}-{seed}"),
                instance: g.instance(),
            });
        }
    }
    if instances.is_empty() {
        bail!("no instances: give instance directories or --preset");
    }
    let settings = BenchSettings {
        strategies: args.strategies,
        objectives: args.objectives,
        time_budget: seconds(args.timeout)?,
        repeats: args.repeats,
        parallel: args.parallel,
    };
    let result = run_benchmark(&instances, &settings);
    write_output(args.report.as_deref(), &result.to_tsv())?;
    eprint!("{}", result.summary_table());
    Ok(0)
}

fn generate(args: GenerateArgs) -> Result<u8> {
    let base = GeneratorParams::preset(args.preset, args.seed);
    let params = GeneratorParams {
        tokens: args.tokens.unwrap_or(base.tokens),
        annotators: args.annotators.unwrap_or(base.annotators),
        true_chains: args.chains.unwrap_or(base.true_chains),
        boundary_noise: args.boundary_noise.unwrap_or(base.boundary_noise),
        chain_noise: args.chain_noise.unwrap_or(base.chain_noise),
        drop_rate: args.drop_rate.unwrap_or(base.drop_rate),
        ..base
    };
    let g = generate_instance(&params)?;
    fs::create_dir_all(&args.out).with_context(|| format!("cannot create {}", args.out.display()))?;
    for (id, text) in g.files() {
        let path = args.out.join(format!("{id}.conll"));
        fs::write(&path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    let truth = args.out.join("truth.conll");
    fs::write(&truth, serialize_result(&g.document, &g.truth)?)
        .with_context(|| format!("cannot write {}", truth.display()))?;
    let stats = g.stats();
    eprintln!(
        "{} annotators, {} distinct mentions, {} annotated mentions",
        g.annotations.len(),
        stats.distinct_mentions,
        stats.annotated_mentions
    );
    Ok(0)
}

fn export_asp(args: ExportArgs) -> Result<u8> {
    let instance = if args.merged {
        let [file] = args.files.as_slice() else {
            bail!("--merged takes exactly one file");
        };
        let text = read(file)?;
        let count = coref_adjudication::pipeline::merged_annotator_count(&text)?;
        let merged = coref_adjudication::conll::parse_merged_for_readjudication(&text, count)
            .with_context(|| format!("{}", file.display()))?;
        let forced = (!merged.forced.is_empty()).then_some(&merged.forced);
        build_instance(
            merged.document.token_count(),
            &merged.annotations,
            forced,
            ForcedMode::Annotator,
        )?
    } else {
        let docs = load_annotator_files(&args.files, None)?;
        let n = coref_adjudication::conll::check_same_tokens(&docs)?;
        let annotations: Vec<Annotation> = docs.into_iter().map(|d| d.annotation).collect();
        build_instance(n, &annotations, None, ForcedMode::Annotator)?
    };
    write_output(args.out.as_deref(), &export_asp_facts(&instance))?;
    Ok(0)
}

fn serve(args: ServeArgs) -> Result<u8> {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    let config = ServiceConfig {
        persist_dir: args.persist,
        default_budget: seconds(args.timeout)?,
    };
    let rt = runtime()?;
    rt.block_on(coref_adjudication_service::serve(args.addr, config, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(0)
}

fn oracle(args: OracleArgs) -> Result<u8> {
    let docs = load_annotator_files(&args.files, None)?;
    let n = coref_adjudication::conll::check_same_tokens(&docs)?;
    let annotations: Vec<Annotation> = docs.into_iter().map(|d| d.annotation).collect();
    let instance = build_instance(n, &annotations, None, ForcedMode::Annotator)?;
    match brute_force_optimum(&instance, &Objective::new(args.objective))? {
        OracleResult::Optimal { cost, selections } => {
            println!("cost {cost}, {} optimal selections", selections.len());
            Ok(0)
        }
        OracleResult::Infeasible => {
            println!("infeasible");
            Ok(3)
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("cannot start the async runtime")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Adjudicate(a) => adjudicate(a),
        Command::Readjudicate(a) => readjudicate(a),
        Command::Bench(a) => bench(a),
        Command::Generate(a) => generate(a),
        Command::ExportAsp(a) => export_asp(a),
        Command::Serve(a) => serve(a),
        Command::Oracle(a) => oracle(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
