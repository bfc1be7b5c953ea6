//! The `acon` command line.
//!
//! Exit codes: 0 success, 1 operational error, 2 configuration or usage
//! error. Every output file is written atomically.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::agent_loop::{run_suite, Runtime, SuiteRunner, TaskRun};
use crate::compression::CompressorKind;
use crate::config::RunConfig;
use crate::distill::{export_pairs, write_pairs};
use crate::gateway::{
    ChatBackend, Gateway, HttpBackend, HttpConfig, LocalBackend, ResponseCache, RetryPolicy,
    ScriptRule, ScriptedResponder,
};
use crate::io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl};
use crate::metrics::{format_csv, format_table, MetricsReport, PricingTable};
use crate::optimizer::{optimize, OptimizeConfig, OptimizerClient, OptimizerTemplates, StageAEval};
use crate::sim::{generate, EnvSpec, GenParams, RuleCompressor, RuleOptimizer, ScriptedAgent};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "acon",
    version,
    about = "Context compression runtime for LLM agents"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run episodes and write their TaskRuns as JSONL.
    Run(RunArgs),
    /// Optimize a compression guideline and write its lineage.
    Optimize(OptimizeArgs),
    /// Recompute metrics from a run log.
    Evaluate(EvaluateArgs),
    /// Export teacher compressor pairs from successful runs.
    ExportDistill(ExportArgs),
    /// Generate a lookup-QA environment spec.
    GenEnv(GenEnvArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendKind {
    /// Offline rule-based models, or `--script` canned responses.
    Mock,
    /// An OpenAI-compatible HTTP endpoint.
    Live,
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendKind,
    /// Content-addressed response cache directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    pub max_retries: u32,
    /// Scripted mock responses (JSON list of {contains|prompt_hash, response}) for every role.
    #[arg(long)]
    pub script: Option<PathBuf>,
    /// Base URL of the live endpoint; defaults to ACON_BASE_URL or OpenAI.
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long, default_value = "/v1/chat/completions")]
    pub path_template: String,
    #[arg(long, default_value_t = 8)]
    pub max_in_flight: usize,
    /// Pricing table JSON; overrides the config's `pricing`.
    #[arg(long)]
    pub pricing: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated task ids; all tasks when omitted.
    #[arg(long)]
    pub tasks: Option<String>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long)]
    pub env: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Comma-separated task ids, or `all`.
    #[arg(long, default_value = "all")]
    pub train: String,
    #[arg(long, default_value_t = 3)]
    pub rounds: usize,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Defaults to the config's `lambda`.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long, default_value_t = 0.01)]
    pub epsilon: f64,
    #[arg(long, value_enum, default_value = "contrastive")]
    pub stage_a_eval: StageAEvalArg,
    /// Optimize the observation guideline instead of the history one.
    #[arg(long)]
    pub observation: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub backend: BackendArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageAEvalArg {
    Contrastive,
    BaselineSuccesses,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub pricing: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    /// Also write the CSV here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Also write the JSON rows here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub runs: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenEnvArgs {
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub tasks: usize,
    #[arg(long, default_value_t = 8)]
    pub objectives: usize,
    #[arg(long, default_value_t = 16)]
    pub distractors: usize,
    #[arg(long, default_value_t = 150)]
    pub padding: usize,
    #[arg(long, default_value_t = 3)]
    pub top_k: usize,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs the subcommand, and returns the
/// process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> i32 {
    match error {
        Error::Config(_) => 2,
        _ => 1,
    }
}

pub fn execute(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Optimize(args) => cmd_optimize(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::ExportDistill(args) => cmd_export(args),
        Command::GenEnv(args) => cmd_gen_env(args),
    }
}

fn load_config(path: Option<&Path>, env: Option<&PathBuf>) -> Result<RunConfig> {
    let mut config = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(env) = env {
        config.env = Some(env.clone());
    }
    config.validate()?;
    Ok(config)
}

fn load_env(config: &RunConfig) -> Result<EnvSpec> {
    let path = config.env.as_ref().ok_or_else(|| {
        Error::Config("no environment spec: pass --env or set `env` in the config".into())
    })?;
    let spec: EnvSpec =
        read_json(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    spec.validate().map_err(|e| Error::Config(e.to_string()))?;
    Ok(spec)
}

fn task_list(spec: &EnvSpec, arg: Option<&str>) -> Vec<String> {
    match arg {
        None | Some("all") => spec.task_ids(),
        Some(list) => list
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
    }
}

struct Backends {
    agent: Gateway,
    compressor: Gateway,
    optimizer: Gateway,
}

fn backends(args: &BackendArgs) -> Result<Backends> {
    let retry = RetryPolicy {
        max_retries: args.max_retries,
        ..RetryPolicy::default()
    };
    let cache = match &args.cache_dir {
        Some(dir) => Some(Arc::new(ResponseCache::on_disk(dir.clone())?)),
        None => None,
    };
    let wrap = |backend: Arc<dyn ChatBackend>| {
        let g = Gateway::new(backend).with_retry(retry);
        match &cache {
            Some(c) => g.with_cache(c.clone()),
            None => g,
        }
    };
    match args.backend {
        BackendKind::Live => {
            let mut config = HttpConfig {
                path_template: args.path_template.clone(),
                max_in_flight: args.max_in_flight,
                timeout: Duration::from_secs(120),
                ..HttpConfig::default()
            };
            if let Some(url) = args
                .base_url
                .clone()
                .or_else(|| std::env::var("ACON_BASE_URL").ok())
            {
                config.base_url = url;
            }
            let shared: Arc<dyn ChatBackend> = Arc::new(HttpBackend::new(config));
            Ok(Backends {
                agent: wrap(shared.clone()),
                compressor: wrap(shared.clone()),
                optimizer: wrap(shared),
            })
        }
        BackendKind::Mock => match &args.script {
            Some(path) => {
                let rules: Vec<ScriptRule> = read_json(path)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                let shared: Arc<dyn ChatBackend> = Arc::new(LocalBackend::new(
                    "scripted-mock",
                    ScriptedResponder::new(rules),
                ));
                Ok(Backends {
                    agent: wrap(shared.clone()),
                    compressor: wrap(shared.clone()),
                    optimizer: wrap(shared),
                })
            }
            None => Ok(Backends {
                agent: wrap(Arc::new(LocalBackend::new(
                    "rule-agent",
                    ScriptedAgent::gather_then_answer(),
                ))),
                compressor: wrap(Arc::new(LocalBackend::new(
                    "rule-compressor",
                    RuleCompressor,
                ))),
                optimizer: wrap(Arc::new(LocalBackend::new("rule-optimizer", RuleOptimizer))),
            }),
        },
    }
}

fn pricing(config: &mut RunConfig, flag: Option<&PathBuf>) -> Result<PricingTable> {
    if let Some(p) = flag {
        config.pricing = Some(p.clone());
        config.validate()?;
    }
    config.load_pricing()
}

fn report_rows(runs: &[TaskRun], reports: &[MetricsReport]) -> Vec<(String, MetricsReport)> {
    let mut rows: Vec<(String, MetricsReport)> = runs
        .iter()
        .zip(reports)
        .map(|(r, m)| (r.task_id.clone(), m.clone()))
        .collect();
    rows.push(("ALL".into(), MetricsReport::aggregate(reports)));
    rows
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref(), args.env.as_ref())?;
    if let Some(p) = args.parallelism {
        config.parallelism = p;
        config.validate()?;
    }
    let pricing = pricing(&mut config, args.backend.pricing.as_ref())?;
    let spec = load_env(&config)?;
    let guidelines = config.resolve_guidelines()?;
    let tasks = task_list(&spec, args.tasks.as_deref());
    for id in &tasks {
        spec.task(id).map_err(|e| Error::Config(e.to_string()))?;
    }
    let b = backends(&args.backend)?;
    let runtime = Runtime::new(b.agent, b.compressor).with_pricing(pricing);
    let suite = run_suite(&spec, &tasks, &config, &guidelines, &runtime)?;
    write_jsonl(&args.out, &suite.runs)?;
    let reports: Vec<MetricsReport> = suite.runs.iter().map(|r| r.metrics.clone()).collect();
    print!("{}", format_table(&report_rows(&suite.runs, &reports)));
    Ok(())
}

fn cmd_optimize(args: OptimizeArgs) -> Result<()> {
    let mut config = load_config(args.config.as_deref(), args.env.as_ref())?;
    let pricing = pricing(&mut config, args.backend.pricing.as_ref())?;
    let spec = load_env(&config)?;
    let guidelines = config.resolve_guidelines()?;
    let train = task_list(&spec, Some(&args.train));
    for id in &train {
        spec.task(id).map_err(|e| Error::Config(e.to_string()))?;
    }
    let kind = if args.observation {
        &config.observation
    } else {
        &config.history
    };
    let initial = match kind {
        CompressorKind::Generative { guideline } => guidelines[guideline].clone(),
        other => {
            return Err(Error::Config(format!(
                "the optimized compressor must be generative, found `{other}`"
            )))
        }
    };
    let b = backends(&args.backend)?;
    let client = OptimizerClient::new(b.optimizer, config.models.optimizer.clone(), config.seed);
    let opt = OptimizeConfig {
        rounds: args.rounds,
        k: args.k,
        lambda: args.lambda.unwrap_or(config.lambda),
        epsilon: args.epsilon,
        candidate_retries: 2,
        stage_a_eval: match args.stage_a_eval {
            StageAEvalArg::Contrastive => StageAEval::Contrastive,
            StageAEvalArg::BaselineSuccesses => StageAEval::BaselineSuccesses,
        },
        seed: config.seed,
    };
    if opt.rounds == 0 || opt.k == 0 || !(opt.lambda >= 0.0) {
        return Err(Error::Config(
            "rounds and k must be at least 1 and lambda non-negative".into(),
        ));
    }
    let runner = SuiteRunner {
        spec: &spec,
        config: config.clone(),
        guidelines: guidelines.clone(),
        runtime: Runtime::new(b.agent, b.compressor).with_pricing(pricing),
    };
    let templates = OptimizerTemplates {
        feedback: guidelines[crate::templates::FEEDBACK_DEFAULT_ID].clone(),
        update: guidelines[crate::templates::UPDATE_DEFAULT_ID].clone(),
        compress_feedback: guidelines[crate::templates::COMPRESS_FEEDBACK_DEFAULT_ID].clone(),
        compress_update: guidelines[crate::templates::COMPRESS_UPDATE_DEFAULT_ID].clone(),
    };
    let lineage = optimize(&initial, &train, &runner, &client, &templates, &opt)?;
    lineage.save(&args.out)?;
    for e in &lineage.entries {
        println!(
            "round {} {:?}: v{} accepted={} score={}",
            e.round,
            e.stage,
            e.guideline.version,
            e.accepted,
            e.round_score.map_or("-".into(), |s| format!("{s:.4}"))
        );
    }
    println!("best: {} v{}", lineage.best.id, lineage.best.version);
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let runs: Vec<TaskRun> = read_jsonl(&args.runs)?;
    let pricing = match &args.pricing {
        Some(p) => {
            let t: PricingTable =
                read_json(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            t.validate().map_err(|e| Error::Config(e.to_string()))?;
            t
        }
        None => PricingTable::reference(),
    };
    let reports = runs
        .iter()
        .map(|r| r.recompute_metrics(&pricing))
        .collect::<Result<Vec<_>>>()?;
    let rows = report_rows(&runs, &reports);
    if let Some(path) = &args.csv {
        write_atomic(path, format_csv(&rows).as_bytes())?;
    }
    if let Some(path) = &args.json {
        write_json(path, &rows)?;
    }
    match args.format {
        Format::Table => print!("{}", format_table(&rows)),
        Format::Csv => print!("{}", format_csv(&rows)),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rows)?),
    }
    Ok(())
}

fn cmd_export(args: ExportArgs) -> Result<()> {
    let runs: Vec<TaskRun> = read_jsonl(&args.runs)?;
    let export = export_pairs(&runs);
    write_pairs(&args.out, &export.pairs)?;
    println!(
        "{} pairs written, {} events skipped",
        export.pairs.len(),
        export.skipped
    );
    Ok(())
}

fn cmd_gen_env(args: GenEnvArgs) -> Result<()> {
    if args.top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    let spec = generate(&GenParams {
        seed: args.seed,
        tasks: args.tasks,
        objectives: args.objectives,
        distractors: args.distractors,
        padding: args.padding,
        top_k: args.top_k,
    });
    write_json(&args.out, &spec)
}
