//! `lakeplan`: ask questions over a data lake, dry-run plans, run benchmarks,
//! simulate schedules and inspect run traces.

mod show;

use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use lakeplan::bench::{run_benchmark, simulate_schedule, BenchmarkManifest, LatencyModel};
use lakeplan::builtin::{builtin_registry, BuiltinBackends, PrepMode, ScriptedVqa, StubRenderer};
use lakeplan::config::EngineConfig;
use lakeplan::control::RunTrace;
use lakeplan::fixtures;
use lakeplan::plan_dsl::{parse_plan, render_plan, validate_plan, PlanError};
use lakeplan::task_graph::{build_dag, group_parallel_tasks};
use lakeplan::tools::ToolDescriptor;

/// Exit status when a run ends without a Finish decision.
const EXIT_DEGRADED: u8 = 2;

#[derive(Parser)]
#[command(name = "lakeplan", version, about = "Plan and run multi-modal questions over a data lake")]
struct Cli {
    /// Log verbosity (-v info, -vv debug); RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Answer one question and write its trace.
    Ask {
        question: String,
        #[arg(short, long)]
        config: PathBuf,
        /// Trace file; defaults to `<artifact_dir>/ask.trace.json`.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Produce or check a plan without running it.
    Plan(PlanArgs),
    /// Run a benchmark manifest and print the report.
    Bench {
        manifest: PathBuf,
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Questions run concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Directory for per-question traces and `report.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Report latency as zero so output is identical across runs.
        #[arg(long)]
        no_timing: bool,
    },
    /// Estimate sequential and parallel makespans of a plan.
    Simulate {
        plan: PathBuf,
        /// Latency model (JSON or TOML).
        #[arg(short, long)]
        model: Option<PathBuf>,
        /// Worker counts to tabulate; 0 means unbounded.
        #[arg(short, long, value_delimiter = ',', default_values_t = [1, 2, 4, 0])]
        workers: Vec<usize>,
    },
    /// Inspect a trace file.
    Trace {
        #[command(subcommand)]
        command: TraceCommand,
    },
    /// Build the bundled lakes from their DDL and CSV sources.
    Fixtures {
        #[command(subcommand)]
        command: FixturesCommand,
    },
}

#[derive(Args)]
struct PlanArgs {
    /// Question to send to the planner (needs --config).
    question: Option<String>,
    /// Plan text to validate instead; `-` reads stdin.
    #[arg(short, long, conflicts_with = "question")]
    file: Option<PathBuf>,
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Also print the graph in DOT form.
    #[arg(long)]
    graph: bool,
}

#[derive(Subcommand)]
enum TraceCommand {
    /// Step-by-step walkthrough of a run.
    Show { trace: PathBuf },
}

#[derive(Subcommand)]
enum FixturesCommand {
    Build {
        /// Directory holding one source folder per dataset.
        #[arg(long)]
        source: Option<PathBuf>,
        #[arg(long, default_value = "fixtures/lakes")]
        out: PathBuf,
        /// Build only this dataset.
        #[arg(long)]
        dataset: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Csv,
    Lines,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    let runtime = match tokio::runtime::Runtime::new() {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match runtime.block_on(dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(verbose: u8) {
    use tracing_subscriber::EnvFilter;
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}

async fn dispatch(command: Command) -> Result<ExitCode> {
    match command {
        Command::Ask { question, config, trace } => ask(&question, &config, trace).await,
        Command::Plan(args) => plan(args).await,
        Command::Bench {
            manifest,
            config,
            format,
            jobs,
            out,
            no_timing,
        } => bench(&manifest, &config, format, jobs, out.as_deref(), no_timing).await,
        Command::Simulate { plan, model, workers } => simulate(&plan, model.as_deref(), &workers),
        Command::Trace {
            command: TraceCommand::Show { trace },
        } => {
            let trace = RunTrace::load(&trace).with_context(|| format!("reading {}", trace.display()))?;
            print!("{}", show::walkthrough(&trace));
            Ok(ExitCode::SUCCESS)
        }
        Command::Fixtures {
            command: FixturesCommand::Build { source, out, dataset },
        } => {
            let source = source.unwrap_or_else(fixtures::default_source_root);
            let built = match dataset {
                Some(name) => vec![fixtures::build_dataset(&source, &name, &out.join(&name))?],
                None => fixtures::build_all(&source, &out)?,
            };
            for path in built {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn load_config(path: &Path) -> Result<EngineConfig> {
    let config = EngineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    config.validate()?;
    Ok(config)
}

async fn ask(question: &str, config_path: &Path, trace_path: Option<PathBuf>) -> Result<ExitCode> {
    let config = load_config(config_path)?;
    let engine = config.build_engine()?;
    let trace = engine.run_query(question).await?;
    let path = trace_path.unwrap_or_else(|| config.artifact_dir.join("ask.trace.json"));
    trace.write(&path).with_context(|| format!("writing {}", path.display()))?;

    let outcome = &trace.outcome;
    match &outcome.answer {
        Some(answer) => println!("{}", serde_json::to_string_pretty(answer)?),
        None => println!("no answer: {}", outcome.reason.as_deref().unwrap_or("run aborted")),
    }
    println!("trace: {}", path.display());
    if outcome.aborted {
        bail!("run aborted: {}", outcome.reason.as_deref().unwrap_or("unknown reason"));
    }
    if outcome.degraded {
        eprintln!("warning: replanning budget exhausted; the answer is a best effort");
        return Ok(ExitCode::from(EXIT_DEGRADED));
    }
    Ok(ExitCode::SUCCESS)
}

/// Built-in tool schemas, for commands that only need to check plans.
fn offline_tools() -> Result<Vec<ToolDescriptor>> {
    let registry = builtin_registry(&BuiltinBackends {
        vqa: Arc::new(ScriptedVqa::default()),
        prep_mode: PrepMode::Direct,
        sandbox: None,
        renderer: Arc::new(StubRenderer),
    })?;
    Ok(registry.descriptors().to_vec())
}

fn read_plan_text(path: &Path) -> Result<String> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text)?;
        return Ok(text);
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

async fn plan(args: PlanArgs) -> Result<ExitCode> {
    let (text, tools) = match (&args.question, &args.file) {
        (_, Some(file)) => {
            let tools = match &args.config {
                Some(c) => load_config(c)?.build_engine()?.registry.descriptors().to_vec(),
                None => offline_tools()?,
            };
            (read_plan_text(file)?, tools)
        }
        (Some(question), None) => {
            let Some(config) = &args.config else {
                bail!("planning a question needs --config");
            };
            let engine = load_config(config)?.build_engine()?;
            let tools = engine.registry.descriptors().to_vec();
            let state = engine.planner_state(question);
            let response = engine.gateway.plan(&state, &tools, &engine.control.business_rules).await?;
            (response.text, tools)
        }
        (None, None) => bail!("give a question or --file"),
    };

    let draft = match parse_plan(&text) {
        Ok(d) => d,
        Err(error) => {
            eprintln!("{}", PlanError::Syntax { error }.feedback());
            return Ok(ExitCode::FAILURE);
        }
    };
    if !draft.end_marker_seen {
        eprintln!("warning: plan has no <END_OF_PLAN> marker");
    }
    let plan = match validate_plan(&draft, &tools) {
        Ok(p) => p,
        Err(errors) => {
            eprintln!("{}", PlanError::Invalid { errors }.feedback());
            return Ok(ExitCode::FAILURE);
        }
    };
    let graph = build_dag(&plan)?;
    let schedule = group_parallel_tasks(&graph)?;
    println!("{}", render_plan(&plan));
    println!("\nedges:");
    print!("{}", graph.edge_list());
    println!("\nbatches:");
    for (i, batch) in schedule.batches.iter().enumerate() {
        let ids: Vec<String> = batch.iter().map(ToString::to_string).collect();
        println!("  {}: {}", i + 1, ids.join(", "));
    }
    println!("depth: {}", schedule.depth());
    if args.graph {
        println!("\n{}", graph.to_dot());
    }
    Ok(ExitCode::SUCCESS)
}

async fn bench(
    manifest: &Path,
    config: &Path,
    format: Format,
    jobs: usize,
    out: Option<&Path>,
    no_timing: bool,
) -> Result<ExitCode> {
    let config = load_config(config)?;
    let manifest = BenchmarkManifest::load(manifest).with_context(|| format!("loading {}", manifest.display()))?;
    let mut report = run_benchmark(&manifest, &config, out, jobs).await?;
    if no_timing {
        report.rows.iter_mut().for_each(|r| r.latency_s = 0.0);
        report.questions.iter_mut().for_each(|q| q.metrics.latency_s = 0.0);
    }
    let rendered = match format {
        Format::Text => report.render_text(),
        Format::Csv => report.render_csv(),
        Format::Lines => report.render_lines(),
    };
    print!("{rendered}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("report.csv"), report.render_csv())?;
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(plan_path: &Path, model: Option<&Path>, workers: &[usize]) -> Result<ExitCode> {
    let model = match model {
        Some(p) => LatencyModel::load(p)?,
        None => LatencyModel::default(),
    };
    let plan = lakeplan::plan_dsl::compile_plan(&read_plan_text(plan_path)?, &offline_tools()?)
        .map_err(|e| anyhow::anyhow!("{}", e.feedback()))?;
    let graph = build_dag(&plan)?;
    println!(
        "{:>8}  {:>5}  {:>5}  {:>12}  {:>12}  {:>9}",
        "workers", "nodes", "depth", "sequential", "parallel", "reduction"
    );
    for &p in workers {
        let r = simulate_schedule(&graph, &model, (p > 0).then_some(p));
        let label = if p == 0 { "inf".to_string() } else { p.to_string() };
        println!(
            "{label:>8}  {:>5}  {:>5}  {:>12.3}  {:>12.3}  {:>8.1}%",
            r.nodes,
            r.depth,
            r.sequential_makespan,
            r.parallel_makespan,
            r.reduction() * 100.0
        );
    }
    Ok(ExitCode::SUCCESS)
}
