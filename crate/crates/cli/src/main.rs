use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use sqlreward::dataset::{load_dataset_named, load_predictions};
use sqlreward::eval::{compare_metrics, evaluate, write_report, EvalInput, EvalOptions};
use sqlreward::executor::{DEFAULT_CACHE_CAPACITY, DEFAULT_ROW_LIMIT};
use sqlreward::rewards::ScoreError;
use sqlreward::service::{self, RewardService, ServiceConfig};
use sqlreward::{score_completion, CompareOptions, CompositeKind, DatabaseHandle, ExecCache, ExecLimits, ScoreOptions};

/// Exit code when the gold query of a `score` call fails.
const EXIT_GOLD_FAILURE: u8 = 2;

#[derive(Parser)]
#[command(name = "sqlreward", version, about = "Execution-based rewards and metrics for Text-to-SQL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate prediction files against one or more benchmarks.
    Eval(EvalArgs),
    /// Score a single completion and print the reward breakdown as JSON.
    Score(ScoreArgs),
    /// List items where classic and refined execution accuracy disagree.
    CompareMetrics(CompareArgs),
    /// Run the HTTP scoring service.
    Serve(ServeArgs),
}

#[derive(Args, Clone)]
struct ExecArgs {
    /// Per-query execution deadline in milliseconds.
    #[arg(long, env = "SQLREWARD_TIMEOUT_MS", default_value_t = 30_000)]
    timeout_ms: u64,
    /// Absolute numeric tolerance for the final refined-EX comparison.
    #[arg(long, env = "SQLREWARD_TOLERANCE", default_value_t = 0.0)]
    tolerance: f64,
    /// Maximum rows a query may return.
    #[arg(long, env = "SQLREWARD_ROW_LIMIT", default_value_t = DEFAULT_ROW_LIMIT)]
    row_limit: usize,
}

impl ExecArgs {
    fn score_options(&self) -> Result<ScoreOptions> {
        if self.timeout_ms == 0 {
            bail!("--timeout-ms must be positive");
        }
        if self.row_limit == 0 {
            bail!("--row-limit must be positive");
        }
        if self.tolerance.is_nan() || self.tolerance < 0.0 {
            bail!("--tolerance must be a non-negative number");
        }
        Ok(ScoreOptions {
            limits: ExecLimits::default()
                .with_timeout(Duration::from_millis(self.timeout_ms))
                .with_row_limit(self.row_limit),
            compare: CompareOptions::with_tolerance(self.tolerance),
        })
    }
}

#[derive(Args)]
struct EvalArgs {
    /// Benchmark file as NAME=PATH; repeatable.
    #[arg(long = "dataset", env = "SQLREWARD_DATASET", value_delimiter = ',', required = true)]
    datasets: Vec<String>,
    /// Prediction file as NAME=PATH, matched to a dataset by name; repeatable.
    #[arg(long = "predictions", env = "SQLREWARD_PREDICTIONS", value_delimiter = ',', required = true)]
    predictions: Vec<String>,
    /// Directory holding <db_id>/<db_id>.sqlite.
    #[arg(long, env = "SQLREWARD_DB_ROOT")]
    db_root: PathBuf,
    /// Composite reward reported per item.
    #[arg(long, env = "SQLREWARD_KIND", default_value = "gate")]
    kind: CompositeKind,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "SQLREWARD_WORKERS", default_value_t = 0)]
    workers: usize,
    /// Where to write the JSON report.
    #[arg(long, env = "SQLREWARD_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long, env = "SQLREWARD_DB_ROOT")]
    db_root: PathBuf,
    /// Database id under the root.
    #[arg(long, env = "SQLREWARD_DB_ID")]
    db_id: String,
    /// Gold SQL query.
    #[arg(long)]
    gold: String,
    /// Raw completion text, tags included.
    #[arg(long, conflicts_with = "completion_file", required_unless_present = "completion_file")]
    completion: Option<String>,
    /// Read the raw completion from a file ('-' for stdin).
    #[arg(long)]
    completion_file: Option<PathBuf>,
    #[arg(long, env = "SQLREWARD_KIND", default_value = "gate")]
    kind: CompositeKind,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct CompareArgs {
    /// Benchmark file as NAME=PATH (or just PATH).
    #[arg(long, env = "SQLREWARD_DATASET")]
    dataset: String,
    /// Prediction file as NAME=PATH (or just PATH).
    #[arg(long, env = "SQLREWARD_PREDICTIONS")]
    predictions: String,
    #[arg(long, env = "SQLREWARD_DB_ROOT")]
    db_root: PathBuf,
    #[arg(long, env = "SQLREWARD_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, env = "SQLREWARD_OUT")]
    out: Option<PathBuf>,
    #[command(flatten)]
    exec: ExecArgs,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "SQLREWARD_DB_ROOT")]
    db_root: PathBuf,
    #[arg(long, env = "SQLREWARD_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "SQLREWARD_PORT", default_value_t = 8080)]
    port: u16,
    #[arg(long, env = "SQLREWARD_WORKERS", default_value_t = 0)]
    workers: usize,
    #[arg(long, env = "SQLREWARD_CACHE_CAPACITY", default_value_t = DEFAULT_CACHE_CAPACITY)]
    cache_capacity: usize,
    #[command(flatten)]
    exec: ExecArgs,
}

fn split_named(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((name, path)) if !name.is_empty() => (name.to_owned(), PathBuf::from(path)),
        _ => {
            let path = PathBuf::from(arg);
            let name = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            (name, path)
        }
    }
}

fn load_input(dataset: &str, predictions: &Path, db_root: &Path) -> Result<EvalInput> {
    let (name, path) = split_named(dataset);
    let manifest = load_dataset_named(&name, &path, db_root)?;
    let predictions = load_predictions(predictions)?;
    Ok(EvalInput { manifest, predictions })
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let opts = EvalOptions {
        kind: args.kind,
        score: args.exec.score_options()?,
        workers: args.workers,
    };
    let predictions: Vec<(String, PathBuf)> = args.predictions.iter().map(|p| split_named(p)).collect();
    let mut inputs = Vec::new();
    for arg in &args.datasets {
        let (name, _) = split_named(arg);
        let pred = predictions
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| anyhow!("no --predictions given for dataset `{name}`"))?;
        inputs.push(load_input(arg, &pred.1, &args.db_root)?);
    }
    let cache = ExecCache::default();
    let report = evaluate(&inputs, &args.db_root, &opts, Some(&cache));
    print!("{}", report.render_table());
    if let Some(out) = &args.out {
        let written = write_report(&report, out).with_context(|| format!("writing {}", out.display()))?;
        eprintln!("report written to {} ({} bytes)", written.path.display(), written.bytes);
    }
    Ok(())
}

fn read_completion(args: &ScoreArgs) -> Result<String> {
    if let Some(text) = &args.completion {
        return Ok(text.clone());
    }
    let path = args.completion_file.as_ref().expect("clap enforces one source");
    if path.as_os_str() == "-" {
        return std::io::read_to_string(std::io::stdin()).context("reading completion from stdin");
    }
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn run_score(args: ScoreArgs) -> Result<ExitCode> {
    let db = DatabaseHandle::resolve(&args.db_root, &args.db_id);
    if !db.exists() {
        bail!("database `{}` not found at {}", args.db_id, db.path.display());
    }
    let completion = read_completion(&args)?;
    let opts = args.exec.score_options()?;
    match score_completion(&args.gold, &completion, &db, args.kind, None, opts) {
        Ok(breakdown) => {
            println!("{}", serde_json::to_string_pretty(&breakdown)?);
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ ScoreError::GoldExecution { .. }) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(EXIT_GOLD_FAILURE))
        }
    }
}

fn run_compare(args: CompareArgs) -> Result<()> {
    let opts = EvalOptions {
        kind: CompositeKind::Ex,
        score: args.exec.score_options()?,
        workers: args.workers,
    };
    let (_, pred_path) = split_named(&args.predictions);
    let input = load_input(&args.dataset, &pred_path, &args.db_root)?;
    let cache = ExecCache::default();
    let report = compare_metrics(&input, &args.db_root, &opts, Some(&cache));
    print!("{}", report.render());
    if let Some(out) = &args.out {
        write_report(&report, out).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let terminate = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let terminate = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = terminate => {},
    }
}

fn run_serve(args: ServeArgs) -> Result<()> {
    let score = args.exec.score_options()?;
    let config = ServiceConfig {
        db_root: args.db_root,
        limits: score.limits,
        tolerance: score.compare.tolerance,
        workers: args.workers,
        cache_capacity: args.cache_capacity,
    };
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async move {
        let listener = service::bind(&config, addr).await?;
        let local = listener.local_addr()?;
        eprintln!("sqlreward listening on http://{local} (db root {})", config.db_root.display());
        let svc = Arc::new(RewardService::new(config));
        service::serve(listener, svc, shutdown_signal()).await?;
        eprintln!("sqlreward stopped");
        Ok(())
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Eval(a) => run_eval(a).map(|_| ExitCode::SUCCESS),
        Command::Score(a) => run_score(a),
        Command::CompareMetrics(a) => run_compare(a).map(|_| ExitCode::SUCCESS),
        Command::Serve(a) => run_serve(a).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
