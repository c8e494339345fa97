use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use consistency_checker::bench;
use consistency_checker::exec::WorkerCommand;
use consistency_checker::gateway::GatewayConfig;
use consistency_checker::pipeline::{
    self, EmbedderBackend, EvaluateeBackend, GenBenchConfig, PipelineError, RunConfig, ScoreConfig,
    SyntheticEvaluator,
};
use consistency_checker::scoring::{MetricKind, SimilarityMetric};
use consistency_checker::{Anchor, TaskKind};

/// Floor for the worker pool; most time goes to waiting on the gateway.
const MIN_THREADS: usize = 8;

#[derive(Parser)]
#[command(name = "consistency-checker", version, about = "Self-consistency evaluation of LLMs over transformation trees")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark of root items with an evaluator model.
    GenBench(GenBenchArgs),
    /// Build transformation forests with the model under evaluation.
    Run(RunArgs),
    /// Score the forests of a run directory.
    Score(ScoreArgs),
    /// Correlate consistency scores with external metrics.
    Correlate(CorrelateArgs),
    /// Print every node of one tree with its similarity to the root.
    Dump(DumpArgs),
}

#[derive(Args)]
struct WorkerArgs {
    /// Worker command line; defaults to the bundled stub worker or $CC_WORKER.
    #[arg(long, env = "CC_WORKER")]
    worker: Option<String>,
    /// Per-case execution timeout in seconds.
    #[arg(long, default_value_t = 2.0)]
    timeout: f64,
    /// Concurrent worker processes.
    #[arg(long, default_value_t = 8)]
    pool_size: usize,
}

impl WorkerArgs {
    fn command(&self) -> Result<WorkerCommand, PipelineError> {
        match &self.worker {
            None => Ok(pipeline::default_worker()),
            Some(cmd) => WorkerCommand::parse(cmd).ok_or_else(|| PipelineError::Config(format!("empty worker command {cmd:?}"))),
        }
    }

    fn timeout(&self) -> Result<Duration, PipelineError> {
        Duration::try_from_secs_f64(self.timeout)
            .ok()
            .filter(|d| !d.is_zero())
            .ok_or_else(|| PipelineError::Config(format!("invalid timeout {}", self.timeout)))
    }
}

#[derive(Args)]
struct GatewayArgs {
    /// Sampling temperature.
    #[arg(long, default_value_t = 0.6)]
    temperature: f64,
    /// Sampling seed sent with every request.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Retries for transient gateway failures.
    #[arg(long, default_value_t = 3)]
    max_retries: u32,
    /// In-flight requests per gateway.
    #[arg(long, default_value_t = 8)]
    max_parallel: usize,
}

impl GatewayArgs {
    fn config(&self, base_url: &str, model: &str) -> Result<GatewayConfig, PipelineError> {
        let mut cfg = GatewayConfig::new(base_url, model);
        cfg.temperature = self.temperature;
        cfg.seed = Some(self.seed);
        cfg.max_retries = self.max_retries;
        cfg.max_parallel = self.max_parallel;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Paths {
    /// Only paths starting at the root.
    Root,
    /// Every chain of the requested length.
    All,
}

#[derive(Args)]
struct GenBenchArgs {
    #[arg(long)]
    task: TaskKind,
    /// Number of roots to generate.
    #[arg(long, default_value_t = 10)]
    roots: usize,
    /// Benchmark file to write.
    #[arg(long)]
    out: PathBuf,
    /// Merge the new roots into an existing benchmark file.
    #[arg(long)]
    append: bool,
    #[arg(long, requires = "evaluator_model")]
    evaluator_base_url: Option<String>,
    #[arg(long)]
    evaluator_model: Option<String>,
    /// Offline evaluator seed, used when no evaluator gateway is given.
    #[arg(long, default_value_t = 42)]
    synthetic_seed: u64,
    /// Single round-trip pair `SRC:Source name:TGT:Target name` instead of the defaults.
    #[arg(long)]
    round_trip: Option<String>,
    #[command(flatten)]
    gateway: GatewayArgs,
    #[command(flatten)]
    worker: WorkerArgs,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    bench: PathBuf,
    /// Run directory; reusing it resumes an interrupted run.
    #[arg(long)]
    out: PathBuf,
    /// Depth limit of every tree.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Expected number of operation pairs; checked against the benchmark.
    #[arg(long)]
    branching: Option<usize>,
    /// Number of trees, taken from the start of the benchmark.
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long, default_value_t = 3)]
    runs: usize,
    /// Largest path length scored later.
    #[arg(long, default_value_t = 3)]
    n_max: usize,
    /// Offline mock channel (identity, drop-last-words[:J], reverse-words, dropout:RATE[:SEED]).
    #[arg(long, conflicts_with = "evaluatee_base_url")]
    mock: Option<String>,
    #[arg(long, requires = "evaluatee_model")]
    evaluatee_base_url: Option<String>,
    #[arg(long)]
    evaluatee_model: Option<String>,
    #[command(flatten)]
    gateway: GatewayArgs,
    #[command(flatten)]
    worker: WorkerArgs,
}

#[derive(Args)]
struct ScoringArgs {
    /// Run directory written by `run`.
    #[arg(long)]
    out: PathBuf,
    /// Similarity metric (embedding, bleu, levenshtein); repeatable.
    #[arg(long = "metric", default_value = "embedding")]
    metrics: Vec<MetricKind>,
    /// Average BLEU over both directions.
    #[arg(long)]
    symmetric_bleu: bool,
    #[arg(long, value_enum, default_value = "root")]
    paths: Paths,
    /// Largest path length; defaults to the run's setting.
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long, requires = "embedder_model")]
    embedder_base_url: Option<String>,
    #[arg(long)]
    embedder_model: Option<String>,
    /// Label printed in the score table header.
    #[arg(long, default_value = "evaluatee")]
    label: String,
    #[command(flatten)]
    gateway: GatewayArgs,
    #[command(flatten)]
    worker: WorkerArgs,
}

impl ScoringArgs {
    fn config(&self) -> Result<ScoreConfig, PipelineError> {
        let mut cfg = ScoreConfig::new(&self.out);
        let mut metrics = Vec::new();
        for &kind in &self.metrics {
            let mut m = SimilarityMetric::new(kind);
            m.symmetric_bleu = self.symmetric_bleu;
            if !metrics.contains(&m) {
                metrics.push(m);
            }
        }
        cfg.metrics = metrics;
        cfg.anchor = match self.paths {
            Paths::Root => Anchor::RootOnly,
            Paths::All => Anchor::AllChains,
        };
        cfg.n_max = self.n_max;
        cfg.label = self.label.clone();
        cfg.worker = self.worker.command()?;
        cfg.pool_size = self.worker.pool_size;
        if let (Some(url), Some(model)) = (&self.embedder_base_url, &self.embedder_model) {
            cfg.embedder = EmbedderBackend::Gateway(self.gateway.config(url, model)?);
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
}

#[derive(Args)]
struct DumpArgs {
    #[command(flatten)]
    scoring: ScoringArgs,
    #[arg(long, default_value_t = 0)]
    run: usize,
    #[arg(long, default_value_t = 0)]
    tree: usize,
}

#[derive(Args)]
struct CorrelateArgs {
    /// CSV with one row per model.
    #[arg(long)]
    fixture: PathBuf,
    /// Replace a model's internal columns with a score report: MODEL=PATH.
    #[arg(long = "scores")]
    scores: Vec<String>,
    /// Emit JSON instead of a table.
    #[arg(long)]
    json: bool,
}

fn gen_bench(args: GenBenchArgs) -> Result<i32, PipelineError> {
    let pairs = match &args.round_trip {
        None => bench::default_operation_pairs(args.task),
        Some(pair_arg) => {
            let parts: Vec<&str> = pair_arg.split(':').collect();
            if args.task != TaskKind::Translation || parts.len() != 4 {
                return Err(PipelineError::Config(
                    "--round-trip needs the translation task and SRC:Source name:TGT:Target name".into(),
                ));
            }
            bench::wmt_pairs(parts[0], parts[1], parts[2], parts[3])
        }
    };
    let timeout = args.worker.timeout()?;
    let synthetic = SyntheticEvaluator::new(args.synthetic_seed);
    let (name, result) = match (&args.evaluator_base_url, &args.evaluator_model) {
        (Some(url), Some(model)) => {
            let gw = consistency_checker::gateway::Gateway::new(args.gateway.config(url, model)?.with_env_api_key())?;
            let cfg = GenBenchConfig {
                task_kind: args.task,
                roots: args.roots,
                evaluator_name: model.clone(),
                pairs,
                out: args.out.clone(),
                worker: args.worker.command()?,
                timeout,
                pool_size: args.worker.pool_size,
                append: args.append,
            };
            (model.clone(), pipeline::cmd_gen_bench(&cfg, &gw))
        }
        _ => {
            let name = format!("synthetic-{}", args.synthetic_seed);
            let cfg = GenBenchConfig {
                task_kind: args.task,
                roots: args.roots,
                evaluator_name: name.clone(),
                pairs,
                out: args.out.clone(),
                worker: args.worker.command()?,
                timeout,
                pool_size: args.worker.pool_size,
                append: args.append,
            };
            (name, pipeline::cmd_gen_bench(&cfg, &synthetic))
        }
    };
    let file = result?;
    println!(
        "wrote {} roots by {name} to {}",
        file.roots.len(),
        args.out.display()
    );
    Ok(0)
}

fn run(args: RunArgs) -> Result<i32, PipelineError> {
    let evaluatee = match (&args.mock, &args.evaluatee_base_url, &args.evaluatee_model) {
        (Some(channel), _, _) => EvaluateeBackend::Mock { channel: channel.clone() },
        (None, Some(url), Some(model)) => EvaluateeBackend::Gateway(args.gateway.config(url, model)?),
        _ => {
            return Err(PipelineError::Config(
                "choose an evaluatee: --mock CHANNEL or --evaluatee-base-url with --evaluatee-model".into(),
            ))
        }
    };
    let mut cfg = RunConfig::new(&args.bench, &args.out, evaluatee);
    cfg.depth = args.depth;
    cfg.branching = args.branching;
    cfg.trees = args.trees;
    cfg.runs = args.runs;
    cfg.n_max = args.n_max;
    cfg.worker = args.worker.command()?;
    cfg.timeout = args.worker.timeout()?;
    cfg.pool_size = args.worker.pool_size;
    let outcome = pipeline::cmd_run(&cfg)?;
    println!(
        "built {} trees, resumed {}, failed {}",
        outcome.built, outcome.resumed, outcome.failed
    );
    Ok(outcome.exit_code())
}

fn score(args: ScoreArgs) -> Result<i32, PipelineError> {
    let report = pipeline::cmd_score(&args.scoring.config()?)?;
    print!("{}", report.render_table());
    Ok(0)
}

fn dump(args: DumpArgs) -> Result<i32, PipelineError> {
    let records = pipeline::cmd_dump(&args.scoring.config()?, args.run, args.tree)?;
    let mut stdout = std::io::stdout().lock();
    for r in records {
        // a closed pipe (e.g. `| head`) just ends the listing
        if writeln!(stdout, "{r}\n").is_err() {
            break;
        }
    }
    Ok(0)
}

fn correlate(args: CorrelateArgs) -> Result<i32, PipelineError> {
    let mut scores = Vec::new();
    for entry in &args.scores {
        let (model, path) = entry
            .split_once('=')
            .ok_or_else(|| PipelineError::Config(format!("--scores expects MODEL=PATH, got {entry:?}")))?;
        scores.push((model.to_string(), pipeline::load_score_report(path.as_ref())?));
    }
    let report = pipeline::cmd_correlate(&args.fixture, &scores)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("reports always serialize"));
    } else {
        print!("{}", report.render_table());
    }
    Ok(0)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    consistency_checker::par::init_threads(cores.max(MIN_THREADS));
    let result = match cli.command {
        Command::GenBench(a) => gen_bench(a),
        Command::Run(a) => run(a),
        Command::Score(a) => score(a),
        Command::Correlate(a) => correlate(a),
        Command::Dump(a) => dump(a),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
