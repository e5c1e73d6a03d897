//! Command-line entry point.

use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand};

use qtransducer::agent::{AgentConfig, AgentRuntime, PromptTemplates};
use qtransducer::characterize::{profile_dataset, render_profile_table, DEFAULT_TAU};
use qtransducer::evaluation::{
    accuracy_report, auto_grade, diagnostics_report, export_grades, import_grades, ingest_dataset,
    load_run, render_accuracy_report, render_diagnostics_report, Adapter, DEFAULT_SAMPLE,
};
use qtransducer::llm_backend::BackendRegistry;
use qtransducer::pipeline::{
    run_dataset, Mode, RunDir, RunManifest, Runtimes, DEFAULT_CLARIFICATION_STUB,
};
use qtransducer::protocol::{parse_transcripts, render_transcripts, Interaction};
use qtransducer::service::{serve, ServiceConfig, ServiceState};

#[derive(Parser)]
#[command(name = "qtx", version, about = "Question-transducer middleware for interactive QA")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a published dataset file to transcripts.
    Ingest {
        #[arg(long)]
        adapter: String,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep the first N interactions (0 keeps all).
        #[arg(long, default_value_t = DEFAULT_SAMPLE)]
        sample: usize,
    },
    /// Flag possibly incomplete/ambiguous questions and categorize datasets.
    Characterize {
        /// Transcript files; each file is one dataset named after its stem.
        #[arg(long, required = true, num_args = 1..)]
        input: Vec<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_TAU)]
        tau: f64,
        /// Also write the table (or JSON with --json) to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    /// Run sessions over a transcript file with or without the transducer.
    Run(RunArgs),
    #[command(subcommand)]
    Grade(GradeCommand),
    #[command(subcommand)]
    Report(ReportCommand),
    /// Start the HTTP session service.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    mode: Mode,
    #[arg(long, default_value_t = 3)]
    turns: usize,
    #[arg(long, default_value = "demo")]
    transducer_backend: String,
    #[arg(long, default_value = "demo")]
    responder_backend: String,
    #[arg(long)]
    out: PathBuf,
    /// Backends file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory with classifier.txt, resolver.txt and answer.txt.
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Dataset name; defaults to the input file stem.
    #[arg(long)]
    dataset: Option<String>,
    /// Human reply for turns 2..K of single-turn seeds.
    #[arg(long, default_value = DEFAULT_CLARIFICATION_STUB)]
    stub: String,
    #[arg(long, default_value_t = 1)]
    concurrency: usize,
    #[arg(long, default_value_t = AgentConfig::default().max_iterations)]
    max_iterations: usize,
}

#[derive(Subcommand)]
enum GradeCommand {
    /// Write the grading sheet (CSV).
    Export {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record human grades from a filled-in sheet.
    Import {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        sheet: PathBuf,
    },
    /// Grade ungraded turns with the containment auto-grader.
    Auto {
        #[arg(long)]
        run: PathBuf,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    Accuracy {
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
    Diagnostics {
        #[arg(long, required = true, num_args = 1..)]
        run: Vec<PathBuf>,
        #[arg(long)]
        json: bool,
    },
}

fn registry(config: Option<&Path>) -> Result<BackendRegistry> {
    match config {
        Some(p) => BackendRegistry::load(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(BackendRegistry::with_demo()),
    }
}

fn templates(dir: Option<&Path>) -> Result<Arc<PromptTemplates>> {
    Ok(Arc::new(match dir {
        Some(d) => PromptTemplates::load_dir(d).with_context(|| format!("loading {}", d.display()))?,
        None => PromptTemplates::default(),
    }))
}

fn read_transcripts(path: &Path) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_transcripts(&text).with_context(|| format!("parsing {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into())
}

fn emit(text: &str, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

async fn run(args: RunArgs) -> Result<()> {
    if args.turns == 0 {
        bail!("--turns must be at least 1");
    }
    let reg = registry(args.config.as_deref())?;
    let templates = templates(args.templates.as_deref())?;
    let agent = AgentConfig {
        max_iterations: args.max_iterations,
        ..AgentConfig::default()
    };
    let runtime = |name: &str| -> Result<AgentRuntime> {
        Ok(AgentRuntime::new(reg.get(name)?)
            .with_templates(templates.clone())
            .with_config(agent.clone()))
    };
    let runtimes = Runtimes {
        transducer: runtime(&args.transducer_backend)?,
        responder: runtime(&args.responder_backend)?,
    };
    let interactions = read_transcripts(&args.input)?;
    let dataset = args.dataset.clone().unwrap_or_else(|| stem(&args.input));
    let multi = interactions.iter().filter(|i| i.len() > 1).count();
    let human_simulation = format!(
        "replay: {multi} multi-turn seed(s) replay recorded human turns; {} single-turn seed(s) use the stub for turns 2..{}",
        interactions.len() - multi,
        args.turns
    );
    let manifest = RunManifest {
        mode: args.mode,
        turns: args.turns,
        transducer_backend: args.transducer_backend.clone(),
        responder_backend: args.responder_backend.clone(),
        human_simulation,
        stub: args.stub.clone(),
    };
    let dir = RunDir::create(&args.out, &manifest)?;
    let states = run_dataset(&dir, &dataset, &interactions, &manifest, &runtimes, args.concurrency).await?;
    let turns: usize = states.iter().map(|s| s.records.len()).sum();
    let calls: u64 = states.iter().map(|s| s.stats.calls).sum();
    let early = states.iter().filter(|s| s.ended_early.is_some()).count();
    println!(
        "{} session(s), {turns} turn(s), {calls} LLM call(s), {early} ended early -> {}",
        states.len(),
        args.out.display()
    );
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();

    match Cli::parse().command {
        Command::Ingest {
            adapter,
            input,
            out,
            sample,
        } => {
            let adapter: Adapter = adapter.parse()?;
            let limit = (sample > 0).then_some(sample);
            let interactions = ingest_dataset(&input, adapter, limit)?;
            fs::write(&out, render_transcripts(&interactions))
                .with_context(|| format!("writing {}", out.display()))?;
            println!("{} interaction(s) -> {}", interactions.len(), out.display());
        }
        Command::Characterize {
            input,
            tau,
            report,
            json,
        } => {
            let mut profiles = Vec::new();
            for path in &input {
                profiles.push(profile_dataset(&stem(path), &read_transcripts(path)?, tau)?);
            }
            let text = if json {
                format!("{}\n", serde_json::to_string_pretty(&profiles)?)
            } else {
                render_profile_table(&profiles)
            };
            print!("{text}");
            if let Some(p) = report {
                fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
        }
        Command::Run(args) => run(args).await?,
        Command::Grade(GradeCommand::Export { run, out }) => {
            emit(&export_grades(&load_run(&run)?), out.as_deref())?;
        }
        Command::Grade(GradeCommand::Import { run, sheet }) => {
            let mut data = load_run(&run)?;
            let text = fs::read_to_string(&sheet).with_context(|| format!("reading {}", sheet.display()))?;
            let s = import_grades(&mut data, &text)?;
            println!(
                "{} row(s): {} recorded, {} unchanged, {} left ungraded",
                s.rows, s.recorded, s.unchanged, s.skipped_ungraded
            );
        }
        Command::Grade(GradeCommand::Auto { run }) => {
            let mut data = load_run(&run)?;
            let s = auto_grade(&mut data)?;
            println!(
                "auto-graded {} turn(s) ({} agree); kept {} human grade(s)",
                s.graded, s.agree, s.kept_human
            );
        }
        Command::Report(ReportCommand::Accuracy { run, json }) => {
            let runs = run.iter().map(|p| load_run(p)).collect::<Result<Vec<_>, _>>()?;
            let report = accuracy_report(&runs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_accuracy_report(&report));
            }
        }
        Command::Report(ReportCommand::Diagnostics { run, json }) => {
            let runs = run.iter().map(|p| load_run(p)).collect::<Result<Vec<_>, _>>()?;
            let report = diagnostics_report(&runs)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{}", render_diagnostics_report(&report));
            }
        }
        Command::Serve {
            port,
            host,
            config,
            templates: dir,
        } => {
            let mut cfg = ServiceConfig::new(registry(config.as_deref())?);
            cfg.templates = templates(dir.as_deref())?;
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            eprintln!("serving on http://{addr}");
            serve(addr, ServiceState::new(cfg)).await?;
        }
    }
    Ok(())
}
