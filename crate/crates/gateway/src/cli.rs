//! Command-line interface.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ecoroute_core::eval::report::render_table;
use ecoroute_core::eval::{emit_report, generate_dataset, load_dataset, run_eval, EvalRun};
use ecoroute_core::eval::dataset::write_dataset;
use ecoroute_core::pipeline::Pipeline;
use ecoroute_core::record::{read_log, EvalMode, JsonlWriter, LogRecord};
use ecoroute_core::{Clock, ManualClock, SystemClock};

use crate::app::assemble;
use crate::config::{resolve_path, BackendKind, ConfigRoot, CONFIG_ENV};
use crate::server::{router, AppState};

#[derive(Debug, Parser)]
#[command(name = "ecoroute", version, about = "Energy-aware routing gateway for local language models")]
pub struct Cli {
    /// Config file (TOML). Falls back to $ECOROUTE_CONFIG, then config/ecoroute.toml.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Start the HTTP gateway.
    Serve,
    /// Run baseline and/or adaptive passes over a dataset and write a report.
    Eval(EvalArgs),
    /// Build a report from an existing run log.
    Report {
        #[arg(long, value_name = "PATH")]
        log: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
}

#[derive(Debug, Subcommand)]
pub enum DatasetCommand {
    /// Write a labelled 150-item dataset.
    Gen {
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Adaptive,
    Both,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "PATH")]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Both)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    pub repetitions: u32,
    /// Serve from the built-in mock backend.
    #[arg(long, conflicts_with = "backend_url")]
    pub mock: bool,
    /// Serve from a model server at this URL.
    #[arg(long, value_name = "URL")]
    pub backend_url: Option<String>,
    /// Keep the cache across repetitions.
    #[arg(long)]
    pub warm_cache: bool,
    /// Append per-query records to this JSONL file.
    #[arg(long, value_name = "PATH")]
    pub log: Option<PathBuf>,
    /// Report path; a plain-text table is written next to it.
    #[arg(long, value_name = "PATH", default_value = "report.json")]
    pub out: PathBuf,
    /// Let the mock sleep in wall time instead of on a virtual clock.
    #[arg(long)]
    pub real_time: bool,
    /// Mock wall-time scale; only meaningful with --real-time.
    #[arg(long, value_name = "FACTOR")]
    pub time_scale: Option<f64>,
    /// Worker threads issuing queries.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
}

/// Loads the config. A path given by flag or environment must exist; the
/// default path may be absent unless `required`.
pub fn load_config(flag: Option<&Path>, required: bool) -> anyhow::Result<ConfigRoot> {
    let explicit = flag.is_some() || std::env::var_os(CONFIG_ENV).is_some_and(|v| !v.is_empty());
    let path = resolve_path(flag);
    if !path.exists() && !explicit && !required {
        tracing::info!(path = %path.display(), "no config file; using defaults");
        return Ok(ConfigRoot::default());
    }
    Ok(ConfigRoot::load(&path)?)
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Serve => {
            let cfg = load_config(cli.config.as_deref(), true)?;
            serve(cfg)
        }
        Command::Eval(args) => {
            let cfg = load_config(cli.config.as_deref(), false)?;
            eval(cfg, &args)
        }
        Command::Report { log, out } => report(&log, &out),
        Command::Dataset {
            command: DatasetCommand::Gen { seed, out },
        } => {
            let items = generate_dataset(seed);
            write_dataset(&items, &out).with_context(|| format!("writing {}", out.display()))?;
            println!("wrote {} items to {}", items.len(), out.display());
            Ok(())
        }
    }
}

fn serve(cfg: ConfigRoot) -> anyhow::Result<()> {
    let clock: Arc<dyn Clock> = Arc::new(SystemClock::new());
    let parts = assemble(&cfg, clock.clone())?;
    let setup = parts.setup;
    let pipeline = Pipeline::new(
        setup.new_router(),
        setup.manager(EvalMode::Adaptive)?,
        setup.meter.clone(),
        setup.adapt,
    );
    let log = match &cfg.log_path {
        Some(p) => Some(JsonlWriter::open(p).with_context(|| format!("opening log_path {}", p.display()))?),
        None => None,
    };
    let state = Arc::new(AppState::new(pipeline, clock, log));
    let addr = format!("{}:{}", cfg.service.bind, cfg.service.port);

    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&addr)
            .await
            .with_context(|| format!("binding {addr}"))?;
        tracing::info!(%addr, backend = ?cfg.backend.kind, "listening");
        axum::serve(listener, router(state.clone()))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .context("server error")
    })?;
    if let Some(log) = state.log() {
        let lines = log.close()?;
        tracing::info!(lines, "log closed");
    }
    Ok(())
}

fn eval(mut cfg: ConfigRoot, args: &EvalArgs) -> anyhow::Result<()> {
    if args.repetitions == 0 {
        bail!("--repetitions must be at least 1");
    }
    if args.concurrency == 0 {
        bail!("--concurrency must be at least 1");
    }
    if args.mock {
        cfg.backend.kind = BackendKind::Mock;
    }
    if let Some(url) = &args.backend_url {
        cfg.backend.kind = BackendKind::Ollama;
        cfg.backend.base_url = url.clone();
    }
    if let Some(scale) = args.time_scale {
        if !(scale >= 0.0 && scale.is_finite()) {
            bail!("--time-scale must be a non-negative number");
        }
        cfg.backend.mock.time_scale = scale;
    }
    let virtual_time = cfg.backend.kind == BackendKind::Mock && !args.real_time;
    let clock: Arc<dyn Clock> = if virtual_time {
        Arc::new(ManualClock::new())
    } else {
        Arc::new(SystemClock::new())
    };

    let dataset = load_dataset(&args.dataset)?;
    if dataset.is_empty() {
        bail!("dataset {} has no items", args.dataset.display());
    }
    let mut setup = assemble(&cfg, clock)?.setup;
    setup.warm_cache = args.warm_cache;
    setup.concurrency = args.concurrency;
    let sink = match &args.log {
        Some(p) => Some(JsonlWriter::open(p).with_context(|| format!("opening {}", p.display()))?),
        None => None,
    };

    let mut records: Vec<LogRecord> = Vec::new();
    let mut references = None;
    let mut finish = |run: EvalRun| -> anyhow::Result<()> {
        eprintln!(
            "{}: {} records, router {:?}, model switches {}",
            run.mode,
            run.records.len(),
            run.counters,
            run.residency.switch_count
        );
        let aborted = run.aborted.clone();
        records.extend(run.records);
        match aborted {
            Some(e) => bail!("{} run aborted: {e}", run.mode),
            None => Ok(()),
        }
    };

    if matches!(args.mode, ModeArg::Baseline | ModeArg::Both) {
        let run = run_eval(&setup, &dataset, EvalMode::Baseline, args.repetitions, None, sink.as_ref())?;
        references = Some(run.responses.clone());
        finish(run)?;
    }
    if matches!(args.mode, ModeArg::Adaptive | ModeArg::Both) {
        if references.is_none() && dataset.iter().all(|d| d.reference.is_none()) {
            tracing::warn!("dataset has no references; adaptive run proceeds without quality signals");
        }
        let run = run_eval(
            &setup,
            &dataset,
            EvalMode::Adaptive,
            args.repetitions,
            references.as_ref(),
            sink.as_ref(),
        )?;
        finish(run)?;
    }
    if let Some(s) = &sink {
        s.close()?;
    }

    let report = emit_report(&records, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    print!("{}", render_table(&report));
    println!("report written to {}", args.out.display());
    Ok(())
}

fn report(log: &Path, out: &Path) -> anyhow::Result<()> {
    let records = read_log(log)?;
    if records.is_empty() {
        bail!("log {} has no records", log.display());
    }
    let report = emit_report(&records, out).with_context(|| format!("writing {}", out.display()))?;
    print!("{}", render_table(&report));
    println!("report written to {}", out.display());
    Ok(())
}
