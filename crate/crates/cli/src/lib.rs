//! The `sci` command-line tool.
//!
//! Every command reads one JSON run config (`--config`). Flags override the
//! matching config entries. Artifacts land in the output directory, which
//! defaults to the directory holding the config file.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use config::{Overrides, Rounds, RunConfig};
use sci_core::StrategyKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Backend(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Backend(_) => 3,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Data(format!("{}: {e}", path.display()))
    }
}

#[derive(Debug, Parser)]
#[command(name = "sci", version, about = "Counterfactual decoding and robustness benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct CommonArgs {
    /// Run config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// sci3, sci5, sci7 or M,N.
    #[arg(long)]
    pub rounds: Option<Rounds>,
    /// baseline, tie, vcd, m3id or sci.
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Sampler seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub parallelism: Option<usize>,
    /// Plausibility threshold in (0, 1], or `off`.
    #[arg(long)]
    pub beta: Option<String>,
    #[arg(long)]
    pub tau1: Option<f64>,
    #[arg(long)]
    pub tau2: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CommonArgs {
    pub fn overrides(&self) -> Result<Overrides, CliError> {
        let beta = match self.beta.as_deref() {
            None => None,
            Some("off" | "none") => Some(None),
            Some(b) => Some(Some(
                b.parse::<f64>()
                    .map_err(|e| CliError::Usage(format!("--beta {b:?}: {e}")))?,
            )),
        };
        Ok(Overrides {
            rounds: self.rounds,
            strategy: self.strategy,
            seed: self.seed,
            parallelism: self.parallelism,
            beta,
            tau1: self.tau1,
            tau2: self.tau2,
            alpha: self.alpha,
            out: self.out.clone(),
        })
    }

    pub fn load(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::load(&self.config)?;
        cfg.apply(&self.overrides()?);
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Normalize dataset files (TSV or JSONL) into sample records.
    Ingest {
        #[command(flatten)]
        common: CommonArgs,
        /// Source files; defaults to `paths.sources` from the config.
        files: Vec<PathBuf>,
    },
    /// Build counterfactual variants for every sample.
    Variants {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Decode every sample and write prediction records.
    Decode {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Build the bias and sensitivity subsets from greedy predictions.
    BuildDrbench {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Accuracy tables for one or more strategy runs.
    Report {
        #[command(flatten)]
        common: CommonArgs,
        /// Strategy labels to compare, e.g. `baseline,sci5`.
        #[arg(long, value_delimiter = ',')]
        runs: Vec<String>,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Serve the toy backend over the wire protocol (stdio unless --listen).
    ServeToy {
        #[command(flatten)]
        common: CommonArgs,
        /// TCP address to listen on, e.g. 127.0.0.1:7878.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Write a synthetic corpus for the toy backend.
    ToyCorpus {
        #[arg(long, default_value_t = 200)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output JSONL file.
        #[arg(long)]
        output: PathBuf,
    },
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Ingest { common, files } => {
            let cfg = common.load()?;
            let _lock = manifest::OutputLock::acquire(&cfg.out_dir())?;
            let s = commands::ingest::run(&cfg, &files)?;
            println!("{s}");
        }
        Command::Variants { common } => {
            let cfg = common.load()?;
            let _lock = manifest::OutputLock::acquire(&cfg.out_dir())?;
            let s = commands::variants::run(&cfg)?;
            println!("{s}");
        }
        Command::Decode { common } => {
            let cfg = common.load()?;
            let _lock = manifest::OutputLock::acquire(&cfg.out_dir())?;
            let s = commands::decode::run(&cfg)?;
            println!("{s}");
        }
        Command::BuildDrbench { common } => {
            let cfg = common.load()?;
            let _lock = manifest::OutputLock::acquire(&cfg.out_dir())?;
            let out = commands::build::run(&cfg)?;
            print!("{}", out.table);
        }
        Command::Report { common, runs, json } => {
            let cfg = common.load()?;
            let _lock = manifest::OutputLock::acquire(&cfg.out_dir())?;
            let out = commands::report::run(&cfg, &runs)?;
            if json {
                println!("{}", out.json);
            } else {
                print!("{}", out.text);
            }
        }
        Command::ServeToy { common, listen } => {
            let cfg = common.load()?;
            commands::serve::run(&cfg, listen.as_deref())?;
        }
        Command::ToyCorpus { count, seed, output } => {
            commands::ingest::write_toy_corpus(&output, count, seed)?;
            println!("wrote {count} samples to {}", output.display());
        }
    }
    Ok(())
}
