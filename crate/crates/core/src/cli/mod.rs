//! The `promptsearch` command line.
//!
//! Exit codes: 0 on success, 2 on usage or configuration errors (reported
//! before any file is written), 1 when the pipeline fails.

pub mod config;
pub mod export;
pub mod prompts;
pub mod sim;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::backends::http::{HttpChat, HttpEmbedder, HttpImager};
use crate::backends::{ArtifactStore, Backends};
use crate::engine::Engine;
use crate::error_analysis::analyze;
use crate::optimizer::baselines::Baseline;
use crate::optimizer::{call_budget, FinalResult, RunEvent, Session};
use crate::pattern_catalog::{load_catalog, Catalog};
use crate::runlog::{new_run_id, read_events, write_json, CallTotals, EventWriter};
use crate::synthetic::{adhoc_task, generate_tasks, task_backends_with, CorruptionProfile, SimulatedAgents};
use crate::templates::Templates;
use config::{load_config, BackendKind, CliConfig};
use prompts::{parse_prompts, PromptItem};

pub const RUN_LOG: &str = "run.jsonl";
pub const FINAL: &str = "final.json";
pub const METADATA: &str = "metadata.json";
pub const CLUSTERS: &str = "clusters.csv";
pub const IMAGES: &str = "images";
pub const DEFAULT_OUT: &str = "promptsearch-out";

#[derive(Debug, Parser)]
#[command(name = "promptsearch", version, about = "Test-time prompt search for text-to-image models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub backend: Option<BackendKind>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Candidate rewrites per iteration.
    #[arg(long)]
    pub candidates: Option<usize>,
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Candidates sampled into memory per iteration.
    #[arg(long)]
    pub samples: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct PromptArgs {
    #[arg(long, conflicts_with = "prompt_file")]
    pub prompt: Option<String>,
    /// Plain text (one prompt per line) or JSONL with {id, prompt}.
    #[arg(long)]
    pub prompt_file: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Detect and map prompt-image errors (Stage 1 only).
    Analyze {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        prompts: PromptArgs,
    },
    /// Analyse and optimize prompts.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        #[command(flatten)]
        prompts: PromptArgs,
        /// Continue unfinished runs found in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Optimize generated synthetic tasks under the mock stack.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 50)]
        tasks: usize,
    },
    /// Simulate and compare against the baselines.
    Bench {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 50)]
        tasks: usize,
    },
    /// Write per-candidate cluster data of a run as CSV.
    Export {
        /// Run directory holding run.jsonl.
        #[arg(long)]
        run: PathBuf,
        /// Output file; defaults to clusters.csv in the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seed of the 2-D projection.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failed(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Failed(e)
    }
}

type CliResult<T> = Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Contents of `final.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub run_id: String,
    #[serde(flatten)]
    pub result: FinalResult,
    /// Calls made by the process that finished the run.
    pub calls: CallTotals,
    /// Chat-call ceiling for the iterations run.
    pub chat_call_budget: u64,
}

/// Run the command line and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(CliError::Usage(message)) => {
            eprintln!("error: {message}\n\nFor more information, try '--help'.");
            2
        }
        Err(CliError::Failed(e)) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Analyze { common, prompts } => cmd_analyze(&common, &prompts),
        Command::Optimize { common, prompts, resume } => cmd_optimize(&common, &prompts, resume),
        Command::Simulate { common, tasks } => cmd_simulate(&common, tasks, &[]),
        Command::Bench { common, tasks } => {
            cmd_simulate(&common, tasks, &[Baseline::RandomRewrite, Baseline::BestOfN])
        }
        Command::Export { run, out, seed } => cmd_export(&run, out.as_deref(), seed),
    }
}

/// Configuration from file and environment, overridden by flags.
pub fn resolve_config(common: &CommonArgs, vars: impl IntoIterator<Item = (String, String)>) -> Result<CliConfig, String> {
    let mut c = load_config(common.config.as_deref(), vars).map_err(|e| e.to_string())?;
    if let Some(b) = common.backend {
        c.backend = b;
    }
    let p = &mut c.pipeline;
    if let Some(v) = common.seed {
        p.seed = v;
    }
    if let Some(v) = common.max_iterations {
        p.max_iterations = v;
    }
    if let Some(v) = common.candidates {
        p.n_candidates = v;
    }
    if let Some(v) = common.clusters {
        p.k_clusters = v;
    }
    if let Some(v) = common.samples {
        p.m_samples = v;
    }
    p.validate()?;
    Ok(c)
}

fn config_from(common: &CommonArgs) -> CliResult<CliConfig> {
    resolve_config(common, std::env::vars()).map_err(usage)
}

fn load_prompts(args: &PromptArgs) -> CliResult<Vec<PromptItem>> {
    match (&args.prompt, &args.prompt_file) {
        (Some(p), None) if !p.trim().is_empty() => Ok(vec![PromptItem { id: "p1".into(), prompt: p.trim().to_string() }]),
        (Some(_), None) => Err(usage("--prompt is empty")),
        (None, Some(path)) => {
            let text = fs::read_to_string(path).map_err(|e| usage(format!("reading {}: {e}", path.display())))?;
            parse_prompts(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
        }
        (None, None) => Err(usage("one of --prompt or --prompt-file is required")),
        (Some(_), Some(_)) => Err(usage("--prompt and --prompt-file are mutually exclusive")),
    }
}

/// Output directory of each prompt: the root for a single prompt, a
/// subdirectory per id otherwise.
fn run_dirs(root: &Path, items: &[PromptItem]) -> Vec<PathBuf> {
    if items.len() == 1 {
        vec![root.to_path_buf()]
    } else {
        items.iter().map(|i| root.join(&i.id)).collect()
    }
}

fn load_assets(config: &CliConfig) -> CliResult<(Arc<Templates>, Catalog)> {
    let templates = Templates::load(config.templates_dir.as_deref()).map_err(|e| usage(e.to_string()))?;
    let catalog = match &config.catalog {
        Some(p) => load_catalog(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => Catalog::bundled(),
    };
    Ok((Arc::new(templates), catalog))
}

/// Backends for one prompt, storing images under `dir/images`.
pub fn build_backends(config: &CliConfig, prompt: &str, dir: &Path) -> anyhow::Result<Backends> {
    let store = Arc::new(ArtifactStore::on_disk(dir.join(IMAGES)).context("creating image store")?);
    let mut backends = match config.backend {
        BackendKind::Mock => {
            let profile = CorruptionProfile::uniform(config.mock.susceptibility).with_clutter(config.mock.clutter);
            let task = adhoc_task(prompt, profile, config.pipeline.seed)?;
            task_backends_with(task, store, SimulatedAgents::new)
        }
        BackendKind::Http => Backends::new(
            Arc::new(HttpChat::new(&config.chat, store.clone())?),
            Arc::new(HttpImager::new(&config.t2i.backend, config.t2i.endpoint.clone(), store.clone())?),
            Arc::new(HttpEmbedder::new(&config.embed)?),
            store,
        ),
    };
    backends.chat_config = config.chat.clone();
    backends.t2i_config = config.t2i.backend.clone();
    backends.embed_config = config.embed.clone();
    Ok(backends)
}

fn cmd_analyze(common: &CommonArgs, prompt_args: &PromptArgs) -> CliResult<()> {
    let config = config_from(common)?;
    let items = load_prompts(prompt_args)?;
    let (templates, _) = load_assets(&config)?;
    let root = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    for (item, dir) in items.iter().zip(run_dirs(&root, &items)) {
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let engine = Engine { backends: build_backends(&config, &item.prompt, &dir)?, templates: templates.clone() };
        let meta = analyze(&item.prompt, &engine, config.pipeline.seed)
            .with_context(|| format!("analysing prompt {}", item.id))?;
        write_json(&dir.join(METADATA), &meta).context("writing metadata")?;
        println!("{}: {} error(s) -> {}", item.id, meta.error_set.len(), dir.join(METADATA).display());
    }
    Ok(())
}

fn cmd_optimize(common: &CommonArgs, prompt_args: &PromptArgs, resume: bool) -> CliResult<()> {
    let config = config_from(common)?;
    let root = common.out.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
    let (templates, catalog) = load_assets(&config)?;
    if resume {
        let dirs = resumable_dirs(&root)?;
        for dir in dirs {
            resume_run(&config, &dir, &templates, &catalog)?;
        }
        return Ok(());
    }
    let items = load_prompts(prompt_args)?;
    let dirs = run_dirs(&root, &items);
    if let Some(d) = dirs.iter().find(|d| d.join(RUN_LOG).exists()) {
        return Err(usage(format!("{} already holds a run; pass --resume to continue it", d.display())));
    }
    for (item, dir) in items.iter().zip(&dirs) {
        let record = fresh_run(&config, &item.prompt, dir, &templates, &catalog)
            .with_context(|| format!("optimizing prompt {}", item.id))?;
        report(&item.id, &record, dir);
    }
    Ok(())
}

fn report(id: &str, record: &FinalRecord, dir: &Path) {
    let r = &record.result;
    println!(
        "{id}: {:.2} -> {:.2} after {} iteration(s)\n  {}\n  -> {}",
        r.original_score,
        r.final_score,
        r.iterations,
        r.final_prompt,
        dir.join(FINAL).display()
    );
}

fn resumable_dirs(root: &Path) -> CliResult<Vec<PathBuf>> {
    if root.join(RUN_LOG).exists() {
        return Ok(vec![root.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)
        .map_err(|e| usage(format!("reading {}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(RUN_LOG).exists())
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(usage(format!("no run log under {}", root.display())));
    }
    Ok(dirs)
}

fn finish(
    session: &mut Session<'_>,
    engine: &Engine,
    writer: &mut EventWriter,
    run_id: &str,
    dir: &Path,
) -> anyhow::Result<FinalRecord> {
    let result = session.run(writer)?;
    let record = FinalRecord {
        run_id: run_id.to_string(),
        chat_call_budget: call_budget(session.stage1_calls, result.iterations, &session.config),
        result,
        calls: engine.backends.calls.totals(),
    };
    write_json(&dir.join(FINAL), &record).context("writing final.json")?;
    Ok(record)
}

/// Start a run in `dir` and drive it to completion.
pub fn fresh_run(
    config: &CliConfig,
    prompt: &str,
    dir: &Path,
    templates: &Arc<Templates>,
    catalog: &Catalog,
) -> anyhow::Result<FinalRecord> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let engine = Engine { backends: build_backends(config, prompt, dir)?, templates: templates.clone() };
    let entropy = format!("{prompt}\u{0}{}\u{0}{}", config.pipeline.seed, std::process::id());
    let run_id = new_run_id(entropy.as_bytes());
    let mut writer = EventWriter::create(&dir.join(RUN_LOG)).context("creating run log")?;
    writer.write(&RunEvent::RunStarted {
        run_id: run_id.clone(),
        prompt: prompt.to_string(),
        config: config.pipeline.clone(),
        backends: config.snapshot(),
    })?;
    let mut session = Session::start(prompt, config.pipeline.clone(), &engine, catalog, &mut writer)?;
    write_json(&dir.join(METADATA), &session.metadata).context("writing metadata")?;
    finish(&mut session, &engine, &mut writer, &run_id, dir)
}

/// Continue the run logged in `dir`. Pipeline settings come from the log;
/// backends from `config`. A finished run is left untouched.
pub fn resume_run(
    config: &CliConfig,
    dir: &Path,
    templates: &Arc<Templates>,
    catalog: &Catalog,
) -> anyhow::Result<Option<FinalRecord>> {
    let path = dir.join(RUN_LOG);
    let log = read_events::<RunEvent>(&path)?;
    if log.events.iter().any(|e| matches!(e, RunEvent::Final(_))) {
        println!("{}: run already finished; nothing to resume", dir.display());
        return Ok(None);
    }
    let Some(RunEvent::RunStarted { run_id, prompt, config: pipeline, .. }) = log.events.first().cloned() else {
        return Err(anyhow!("{} does not start with run_started", path.display()));
    };
    let engine = Engine { backends: build_backends(config, &prompt, dir)?, templates: templates.clone() };
    // Keep everything up to the last complete iteration.
    let keep = log
        .events
        .iter()
        .rposition(|e| matches!(e, RunEvent::Iteration(_) | RunEvent::Stage1Done { .. }))
        .unwrap_or(0);
    let mut writer = EventWriter::resume(&path, log.ends[keep])?;
    let mut session = match Session::resume(&log.events[..=keep], pipeline.clone(), &engine, catalog) {
        Ok(Some(s)) => s,
        Ok(None) => return Ok(None),
        Err(_) if keep == 0 => {
            let s = Session::start(&prompt, pipeline, &engine, catalog, &mut writer)?;
            write_json(&dir.join(METADATA), &s.metadata).context("writing metadata")?;
            s
        }
        Err(e) => return Err(e.into()),
    };
    let record = finish(&mut session, &engine, &mut writer, &run_id, dir)?;
    report(&run_id, &record, dir);
    Ok(Some(record))
}

fn cmd_simulate(common: &CommonArgs, count: usize, baselines: &[Baseline]) -> CliResult<()> {
    let config = config_from(common)?;
    if config.backend != BackendKind::Mock {
        return Err(usage("synthetic tasks run on the mock backend only"));
    }
    if count == 0 {
        return Err(usage("--tasks must be at least 1"));
    }
    let (templates, catalog) = load_assets(&config)?;
    let tasks = generate_tasks(count, config.pipeline.seed);
    let outcomes = sim::run_tasks(&tasks, &config.pipeline, &catalog, &templates, baselines)
        .map_err(|e| CliError::Failed(e.into()))?;
    let summaries = sim::summarize(&outcomes, config.pipeline.score_target);
    print!("{}", sim::outcome_table(&outcomes));
    println!();
    print!("{}", sim::summary_table(&summaries));
    if let Some(out) = &common.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        let name = if baselines.is_empty() { "simulate.json" } else { "bench.json" };
        let body = serde_json::json!({
            "config": config.snapshot(),
            "tasks": outcomes,
            "summary": summaries,
        });
        write_json(&out.join(name), &body).context("writing results")?;
    }
    Ok(())
}

fn cmd_export(run: &Path, out: Option<&Path>, seed: u64) -> CliResult<()> {
    let path = run.join(RUN_LOG);
    if !path.exists() {
        return Err(usage(format!("no run log at {}", path.display())));
    }
    let log = read_events::<RunEvent>(&path).map_err(|e| CliError::Failed(e.into()))?;
    let rows = export::cluster_rows(&log.events, seed).map_err(|e| CliError::Failed(e.into()))?;
    let target = out.map(Path::to_path_buf).unwrap_or_else(|| run.join(CLUSTERS));
    export::write_rows(&target, &rows).map_err(|e| CliError::Failed(e.into()))?;
    println!("{} row(s) -> {}", rows.len(), target.display());
    Ok(())
}
