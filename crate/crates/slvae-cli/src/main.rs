use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use slvae_cli::{echo_config, missing_artifacts, run, Command, RunConfig};

/// Diffusion source localization: data generation, training, inference,
/// evaluation and scaling runs. Log verbosity follows `RUST_LOG`.
#[derive(Debug, Parser)]
#[command(name = "slvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON run config; unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Simulate (or ingest) a training set plus one held-out query.
    GenData,
    /// Train the forward surrogate and the VAE; write a model bundle.
    Train,
    /// Reconstruct sources for the configured observation file.
    Infer,
    /// Run seeded trials for every configured method.
    Eval,
    /// Time training and inference across synthetic graph sizes.
    Scale,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let cmd = match cli.command {
        Cmd::GenData => Command::GenData,
        Cmd::Train => Command::Train,
        Cmd::Infer => Command::Infer,
        Cmd::Eval => Command::Eval,
        Cmd::Scale => Command::Scale,
    };
    let mut cfg = match &cli.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e:#}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    let cfg = cfg.resolved();
    if echo_config(std::io::stdout().lock(), cmd, &cfg).is_err() {
        return ExitCode::FAILURE;
    }

    let artifacts = match run(cmd, &cfg) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let missing = missing_artifacts(&artifacts);
    if !missing.is_empty() {
        for p in &missing {
            eprintln!("error: declared artifact not produced: {}", p.display());
        }
        return ExitCode::FAILURE;
    }
    for p in &artifacts {
        log::info!("wrote {}", p.display());
    }
    ExitCode::SUCCESS
}
