mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ConfigError;

/// Continual-learning experiments with spiking latent replay and a noisy sleep phase.
#[derive(Parser)]
#[command(name = "spikereplay", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one strategy for one seed and write its report files.
    Run {
        #[arg(short, long)]
        config: PathBuf,
        /// Dotted-path override, e.g. `strategy.noise_sigma=0.4`; repeatable.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Network saved by `pretrain`; skips pretraining.
        #[arg(long)]
        pretrained: Option<PathBuf>,
    },
    /// Run one configuration per value (and seed) with shared pretraining.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Dotted key to vary, e.g. `strategy.noise_sigma`.
        #[arg(long)]
        param: String,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Seeds; defaults to the configured seed.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        /// Seeds processed concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate stored run reports under a results directory.
    Report { dir: PathBuf },
    /// Pretrain the network and save it for later runs.
    Pretrain {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Destination file; defaults to `<output>/pretrained-seed<seed>.json`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            pretrained,
        } => {
            let r = config::load(&config, &overrides)?;
            commands::cmd_run(&r, pretrained.as_deref())?;
        }
        Command::Sweep {
            config,
            overrides,
            param,
            values,
            seeds,
            jobs,
        } => {
            let r = config::load(&config, &overrides)?;
            let seeds = if seeds.is_empty() {
                vec![r.file.seed]
            } else {
                seeds
            };
            let root = commands::cmd_sweep(&r, &param, &values, &seeds, jobs)?;
            println!("sweep results -> {}", root.display());
        }
        Command::Report { dir } => print!("{}", commands::cmd_report(&dir)?),
        Command::Pretrain {
            config,
            overrides,
            out,
        } => {
            let r = config::load(&config, &overrides)?;
            commands::cmd_pretrain(&r, out.as_deref())?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
