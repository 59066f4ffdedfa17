mod config;
mod stages;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use hyperdet::Channel;

use config::PipelineConfig;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "hyperdet", version, about = "Ponzi account detection on transaction-hash hypergraphs")]
struct Cli {
    /// TOML pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for generation, sampling, splitting and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Hyperedges kept per target.
    #[arg(long, global = true)]
    alpha: Option<usize>,
    /// Nodes kept per hyperedge.
    #[arg(long, global = true)]
    beta: Option<usize>,
    #[arg(long, global = true, value_parser = parse_channel)]
    channel: Option<Channel>,
    /// Search the batch-norm x hidden x learning-rate grid.
    #[arg(long, global = true)]
    grid: bool,
    #[arg(long, global = true)]
    repeats: Option<usize>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Transaction JSONL input.
    #[arg(long, global = true)]
    transactions: Option<PathBuf>,
    /// `address,label` CSV input.
    #[arg(long, global = true)]
    labels: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth {
        /// Pad the corpus to exactly this many records.
        #[arg(long)]
        records: Option<usize>,
    },
    /// Parse and validate transactions; build both graphs.
    Ingest,
    /// Two-step hypergraph sampling and k-hop sampling around labeled accounts.
    Sample,
    /// Extract the 17 account features.
    Featurize,
    /// Clique-expand a hypergraph.
    Convert {
        /// Hypergraph JSON (defaults to the full transaction hypergraph).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Train one configuration per channel.
    Train,
    /// Grid search and repeated evaluation.
    Evaluate {
        /// Feature cache written by `featurize`.
        #[arg(long)]
        features: Option<PathBuf>,
    },
    /// Render the results table of an `evaluate` run.
    Report {
        /// `experiment.json` from `evaluate`.
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every stage.
    Pipeline,
}

fn parse_channel(s: &str) -> Result<Channel, String> {
    s.parse().map_err(|e: hyperdet::learning::LearningError| e.to_string())
}

/// Failures that map to their own exit codes.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid config: {0}")]
    Config(String),
}

const EXIT_MISSING_INPUT: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_STAGE: u8 = 5;

fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    match err.downcast_ref::<StageError>() {
        Some(StageError::MissingInput(_)) => ("missing_input", EXIT_MISSING_INPUT),
        Some(StageError::Config(_)) => ("config", EXIT_CONFIG),
        None => {
            let io_missing = err
                .chain()
                .filter_map(|e| e.downcast_ref::<std::io::Error>())
                .any(|e| e.kind() == std::io::ErrorKind::NotFound);
            if io_missing {
                ("missing_input", EXIT_MISSING_INPUT)
            } else {
                ("stage_failure", EXIT_STAGE)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let cwd = std::env::current_dir()?;
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| StageError::MissingInput(format!("config {}: {e}", path.display())))?;
            let mut cfg = PipelineConfig::from_toml(&text)
                .map_err(|e| StageError::Config(format!("{}: {e}", path.display())))?;
            cfg.resolve_paths(path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")));
            cfg
        }
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.synth.seed = seed;
        cfg.sampler.seed = seed;
        cfg.experiment.seed = seed;
        cfg.experiment.model.seed = seed;
    }
    if let Some(a) = cli.alpha {
        cfg.sampler.alpha = a;
    }
    if let Some(b) = cli.beta {
        cfg.sampler.beta = b;
    }
    cfg.experiment.channels = stages::channel_list(cli.channel, &cfg.experiment.channels);
    if cli.grid {
        cfg.experiment.grid = true;
    }
    if let Some(r) = cli.repeats {
        cfg.experiment.repeats = r;
    }
    if let Some(p) = &cli.transactions {
        cfg.paths.transactions = Some(p.clone());
    }
    if let Some(p) = &cli.labels {
        cfg.paths.labels = Some(p.clone());
    }
    if let Some(p) = &cli.out {
        cfg.paths.out = Some(p.clone());
    }
    cfg.resolve_paths(&cwd);
    cfg.sampler.validate().map_err(|e| StageError::Config(e.to_string()))?;
    cfg.experiment.model.validate().map_err(|e| StageError::Config(e.to_string()))?;
    cfg.synth.validate().map_err(|e| StageError::Config(e.to_string()))?;
    if cfg.experiment.repeats == 0 {
        return Err(StageError::Config("repeats must be >= 1".into()).into());
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cfg.paths.out.clone().unwrap_or_else(|| PathBuf::from("hyperdet-out"));
    match cli.command {
        Command::Synth { records } => {
            if records.is_some() {
                cfg.synth.total_records = records;
            }
            stages::synth(&cfg, &out)
        }
        Command::Ingest => stages::ingest(&cfg, &out),
        Command::Sample => stages::sample(&cfg, &out),
        Command::Featurize => stages::featurize(&cfg, &out),
        Command::Convert { input } => stages::convert(&cfg, input.as_deref(), &out),
        Command::Train => stages::train_stage(&cfg, &out),
        Command::Evaluate { features } => {
            let report = stages::evaluate(&cfg, features.as_deref(), &out)?;
            stages::print_results(&report);
            Ok(())
        }
        Command::Report { input } => stages::report(&input, &out),
        Command::Pipeline => stages::pipeline(&mut cfg, &out),
    }
}

fn init_threads() {
    if let Some(n) = std::env::var("HYPERDET_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("HYPERDET_THREADS ignored: {e}");
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    init_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let (kind, code) = classify(&err);
            let body = serde_json::json!({
                "error": kind,
                "message": format!("{err:#}"),
                "exit_code": code,
            });
            eprintln!("{body}");
            ExitCode::from(code)
        }
    }
}
