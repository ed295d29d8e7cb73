//! `synthmention` command-line driver.

mod commands;
mod config;
mod run;

use std::fmt;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

/// An error caused by how the tool was invoked rather than by the data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "synthmention", version, about = "Synthetic mention augmentation and evaluation for biomedical entity normalization")]
struct Cli {
    /// Experiment config (TOML), used by `run` and `validate`.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Suppress progress and summaries on stdout.
    #[arg(long, short, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load and check a concept table and/or corpus split.
    Ingest(commands::IngestArgs),
    /// Export generation prompts for every concept.
    Prompts(commands::PromptsArgs),
    /// Validate raw generations and extract mention spans.
    Extract(commands::ExtractArgs),
    /// Compose synthetic data with training data under a strategy.
    Augment(commands::AugmentArgs),
    /// Rank candidate concepts for each query mention.
    Normalize(commands::NormalizeArgs),
    /// Tokenize a split and write gold (or gazetteer) labels.
    Tag(commands::TagArgs),
    /// Score token labels for disease entity recognition.
    EvalDer(commands::EvalDerArgs),
    /// Score candidate lists with accuracy@k.
    EvalDen(commands::EvalDenArgs),
    /// Mann-Whitney U test between two sets of runs.
    Stats(commands::StatsArgs),
    /// Run the full strategy x engine grid from a config.
    Run {
        /// Output directory; overrides the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a config and its inputs without running anything.
    Validate,
}

fn load_config(cli: &Cli) -> Result<config::LoadedConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| UsageError("this command needs --config".into()))?;
    config::LoadedConfig::load(path)
}

fn dispatch(cli: Cli) -> Result<()> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Ingest(a) => commands::ingest(a, quiet),
        Command::Prompts(a) => commands::prompts(a, quiet),
        Command::Extract(a) => commands::extract(a, quiet),
        Command::Augment(a) => commands::augment(a, quiet),
        Command::Normalize(a) => commands::normalize(a, quiet),
        Command::Tag(a) => commands::tag(a, quiet),
        Command::EvalDer(a) => commands::eval_der(a, quiet),
        Command::EvalDen(a) => commands::eval_den(a, quiet),
        Command::Stats(a) => commands::stats(a, quiet),
        Command::Run { ref out } => {
            let cfg = load_config(&cli)?;
            let dir = run::run_experiment(&cfg, out.as_deref(), cli.seed)?;
            if !quiet {
                println!("wrote {}", dir.display());
            }
            Ok(())
        }
        Command::Validate => {
            let cfg = load_config(&cli)?;
            let diag = config::validate(&cfg);
            for l in &diag.lines {
                eprintln!("{l}");
            }
            if diag.has_errors() {
                return Err(synthmention::Error::invalid(format!("{} problem(s) in {}", diag.lines.len(), cfg.source.display())).into());
            }
            if !quiet {
                println!("ok: {}", cfg.source.display());
            }
            Ok(())
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return 1;
        }
        if cause.is::<synthmention::Error>()
            || cause.is::<std::io::Error>()
            || cause.is::<serde_json::Error>()
            || cause.is::<toml::de::Error>()
        {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(3);
        }
    }
    match panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
        Err(_) => ExitCode::from(3),
    }
}
