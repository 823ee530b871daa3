use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use etid::commands;
use etid::config::{resolve_output_dir, ExperimentConfig};
use etid::error::EtidError;

#[derive(Parser)]
#[command(
    name = "etid",
    about = "Ensemble unlearning pipeline: build, erase, evaluate, benchmark"
)]
struct Cli {
    /// Path to a JSON experiment config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output root (overrides config and the ETID_OUTPUT_DIR env var).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Run internal jobs concurrently.
    #[arg(long, global = true)]
    parallel: bool,

    /// Cap on worker threads when --parallel is set.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Base seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Unlearning ratio override.
    #[arg(long, global = true)]
    unlearn_ratio: Option<f64>,

    /// Number of sub-models override.
    #[arg(short, global = true, long)]
    k: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the configured synthetic dataset to a CSV file.
    GenData {
        /// Destination CSV path.
        path: PathBuf,
    },
    /// Train and persist target models for every configured method and seed.
    Train,
    /// Apply each method's unlearning response to the persisted targets.
    Unlearn {
        /// Newline-separated sample-id list; defaults to a seeded sample of
        /// size unlearn_ratio * N.
        #[arg(long)]
        request: Option<PathBuf>,
    },
    /// Compute the four-desiderata metrics for persisted runs.
    Evaluate,
    /// Unlearning wall-clock comparison across methods.
    Bench,
    /// Grid sweep over K and unlearning-ratio values.
    Sweep {
        /// K values, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "3,5,7,10")]
        ks: Vec<usize>,
        /// Unlearning ratios, comma separated.
        #[arg(long, value_delimiter = ',', default_value = "0.01")]
        urs: Vec<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let code = match &err {
                EtidError::Validation(_) | EtidError::Parse { .. } => 2u8,
                EtidError::ValidityExpired { .. } => 3u8,
                _ => 1u8,
            };
            let record = serde_json::json!({ "error": err.to_string(), "exit_code": code });
            eprintln!("{record}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> etid::Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if cli.parallel {
        cfg.parallel = true;
    }
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| EtidError::Validation(format!("jobs: {e}")))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(ur) = cli.unlearn_ratio {
        cfg.unlearn_ratio = ur;
    }
    if let Some(k) = cli.k {
        cfg.k = k;
    }
    cfg.validate()?;
    let out = resolve_output_dir(&cfg, cli.out.clone());

    match cli.command {
        Command::GenData { path } => commands::cmd_gen_data(&cfg, &path),
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Unlearn { request } => commands::cmd_unlearn(&cfg, &out, request.as_deref()),
        Command::Evaluate => commands::cmd_evaluate(&cfg, &out).map(|_| ()),
        Command::Bench => commands::cmd_bench(&cfg, &out),
        Command::Sweep { ks, urs } => commands::cmd_sweep(&cfg, &out, &ks, &urs).map(|_| ()),
    }
}
