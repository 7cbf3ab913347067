//! `serpeval`: sample, collect, serve, report, validate.
//!
//! Exit codes: 0 ok, 1 usage, 2 validation, 3 runtime. Progress goes to
//! stderr; results go to files in the store.

use std::io::IsTerminal;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serpeval_core::clock::SystemClock;
use serpeval_core::collector::Interrupt;
use serpeval_core::config::StudyConfig;
use serpeval_core::pipeline::{self, PipelineError};

/// Test hook: interrupt `collect` after N ledger appends. The value is
/// `N` or `N:stop`, `N:abort`, `N:torn`.
const INTERRUPT_ENV: &str = "SERPEVAL_INTERRUPT_AFTER";

#[derive(Debug, Parser)]
#[command(name = "serpeval", version, about = "Retrieval effectiveness studies of web search engines")]
struct Cli {
    /// Study configuration file.
    #[arg(long, global = true, default_value = "study.toml")]
    config: PathBuf,
    /// Override the study seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the store directory.
    #[arg(long, global = true)]
    store: Option<PathBuf>,
    /// Override the replay fixture directory.
    #[arg(long, global = true)]
    fixtures: Option<PathBuf>,
    /// Log debug detail to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Segment the query log, draw candidates and build the labeled sample.
    Sample,
    /// Capture results pages and documents for the sample (resumes).
    Collect,
    /// Run the judging service over HTTP.
    Serve {
        /// Address to listen on; port 0 picks a free port.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Compute measures from the judgments and write the exports.
    Report,
    /// Check the configuration and every input without writing anything.
    Validate,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

fn load_config(cli: &Cli) -> Result<StudyConfig, PipelineError> {
    let mut cfg = StudyConfig::load(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(store) = &cli.store {
        cfg.paths.store = absolute(store);
    }
    if let Some(fixtures) = &cli.fixtures {
        cfg.paths.fixtures = Some(absolute(fixtures));
    }
    Ok(cfg)
}

fn interrupt_plan() -> Result<Option<(usize, Interrupt)>, PipelineError> {
    let Ok(raw) = std::env::var(INTERRUPT_ENV) else {
        return Ok(None);
    };
    let bad = || PipelineError::Validation(vec![format!("{INTERRUPT_ENV}={raw:?} is malformed")]);
    let (n, kind) = raw.split_once(':').unwrap_or((&raw, "abort"));
    let n: usize = n.trim().parse().map_err(|_| bad())?;
    let kind = match kind {
        "stop" => Interrupt::Stop,
        "abort" => Interrupt::Abort,
        "torn" => Interrupt::AbortTorn,
        _ => return Err(bad()),
    };
    Ok(Some((n, kind)))
}

fn serve(cfg: &StudyConfig, listen: Option<String>) -> Result<(), PipelineError> {
    let store = pipeline::open_store(cfg)?;
    let study = Arc::new(pipeline::open_study(cfg, &store, Arc::new(SystemClock))?);
    let addr = listen.unwrap_or_else(|| cfg.study.listen.clone());
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| PipelineError::Runtime(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .map_err(|e| PipelineError::Runtime(format!("cannot listen on {addr}: {e}")))?;
        let bound = listener
            .local_addr()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        let p = study.progress();
        tracing::info!(run = %p.run_id, tasks = p.tasks, complete = p.complete, "study open");
        // Scripts read the bound address from this line.
        eprintln!("listening on http://{bound}");
        let app = serpeval_server::router(study, &cfg.study.admin_token);
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
            tracing::info!("shutting down");
        };
        serpeval_server::serve(listener, app, shutdown)
            .await
            .map_err(|e| PipelineError::Runtime(e.to_string()))
    })
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    let cfg = load_config(&cli)?;
    if let Command::Validate = cli.command {
        let warnings = pipeline::cmd_validate(&cfg)?;
        for w in &warnings {
            tracing::warn!("{w}");
        }
        eprintln!("{}: ok, {} warning(s)", cli.config.display(), warnings.len());
        return Ok(());
    }
    cfg.validate(false)?;
    match cli.command {
        Command::Sample => {
            let store = pipeline::open_store(&cfg)?;
            let (sample, report) = pipeline::cmd_sample(&cfg, &store)?;
            eprintln!(
                "sampled {} queries from {} distinct ({} instances) in {} segments",
                sample.queries.len(),
                report.log_distinct,
                report.log_instances,
                report.segments.len()
            );
        }
        Command::Collect => {
            let plan = interrupt_plan()?;
            let store = pipeline::open_store(&cfg)?;
            let run = pipeline::cmd_collect(&cfg, &store, plan)?;
            let l = &run.ledger;
            eprintln!(
                "run {}: {} captures ({} failed, {} short), {} documents, status {:?}",
                run.run_id,
                l.attempted,
                l.failed,
                l.short_captures,
                run.snapshots.len(),
                run.status
            );
        }
        Command::Serve { listen } => serve(&cfg, listen)?,
        Command::Report => {
            let store = pipeline::open_store(&cfg)?;
            let report = pipeline::cmd_report(&cfg, &store)?;
            eprintln!(
                "report for {} written ({} engines, {} warning(s))",
                report.run_id,
                report.engines.len(),
                report.warnings.len()
            );
        }
        Command::Validate => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_target(false)
        .with_ansi(std::io::stderr().is_terminal())
        .with_max_level(if cli.verbose { tracing::Level::DEBUG } else { tracing::Level::INFO })
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
