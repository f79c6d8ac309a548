//! `micro` command-line interface: train, evaluate, sweep, pilot, and
//! synth subcommands over the recommendation engine.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use micro_core::dataset::SplitMode;
use micro_core::error::{Error, Result};
use micro_core::model::Precision;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "micro", version, about = "Multimodal item recommendation engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, metric log, and resolved
    /// config into the output directory.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set beta=0` or
        /// `--set split.mode=cold`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory (overrides the config's `out`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint under the warm or cold protocol and print
    /// one JSON record per cutoff to stdout.
    Evaluate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// warm | cold (defaults to the config's split mode).
        #[arg(long)]
        protocol: Option<String>,
        /// Ranking cutoffs; one metric record is printed per value.
        #[arg(long, num_args = 1.., value_name = "K")]
        k: Vec<usize>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train and evaluate once per axis value; writes a CSV summary.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// One of: k, lambda, beta, L, modality.
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values, e.g. `0,3,5,10`.
        #[arg(long)]
        values: String,
        /// Run up to this many configurations concurrently.
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the pilot statistics (co-interacted similarity and
    /// mutual-top-k purchase proportions) as JSON.
    Pilot {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated k values (default 5,10,15,20).
        #[arg(long = "k-list")]
        k_list: Option<String>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Generate a synthetic dataset: interactions, item manifest, and
    /// one feature file per modality.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_protocol(s: &str) -> Result<SplitMode> {
    match s {
        "warm" => Ok(SplitMode::Warm),
        "cold" => Ok(SplitMode::Cold),
        other => Err(Error::Config(format!("unknown protocol `{other}`"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, set, out } => {
            let mut config = config::load_config(config.as_deref(), &set)?;
            if let Some(out) = out {
                config.out = out;
            }
            config.trainer.validate()?;
            match config.trainer.precision {
                Precision::F64 => commands::cmd_train::<f64>(&config),
                Precision::F32 => commands::cmd_train::<f32>(&config),
            }
        }
        Command::Evaluate {
            config,
            checkpoint,
            protocol,
            k,
            set,
        } => {
            let config = config::load_config(config.as_deref(), &set)?;
            let protocol = protocol.as_deref().map(parse_protocol).transpose()?;
            let ks = if k.is_empty() { config.eval_ks.clone() } else { k };
            match config.trainer.precision {
                Precision::F64 => {
                    commands::cmd_evaluate::<f64>(&config, &checkpoint, protocol, &ks)
                }
                Precision::F32 => {
                    commands::cmd_evaluate::<f32>(&config, &checkpoint, protocol, &ks)
                }
            }
        }
        Command::Sweep {
            config,
            axis,
            values,
            parallel,
            set,
            out,
        } => {
            let mut config = config::load_config(config.as_deref(), &set)?;
            if let Some(out) = out {
                config.out = out;
            }
            config.trainer.validate()?;
            let values: Vec<String> = values
                .split(',')
                .map(|v| v.trim().to_string())
                .filter(|v| !v.is_empty())
                .collect();
            match config.trainer.precision {
                Precision::F64 => commands::cmd_sweep::<f64>(&config, &axis, &values, parallel),
                Precision::F32 => commands::cmd_sweep::<f32>(&config, &axis, &values, parallel),
            }
        }
        Command::Pilot {
            config,
            k_list,
            set,
        } => {
            let config = config::load_config(config.as_deref(), &set)?;
            let ks: Vec<usize> = match k_list {
                Some(list) => list
                    .split(',')
                    .map(|v| {
                        v.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad k `{v}` in k-list")))
                    })
                    .collect::<Result<_>>()?,
                None => Vec::new(),
            };
            match config.trainer.precision {
                Precision::F64 => commands::cmd_pilot::<f64>(&config, &ks),
                Precision::F32 => commands::cmd_pilot::<f32>(&config, &ks),
            }
        }
        Command::Synth { config, set, out } => {
            let mut config = config::load_config(config.as_deref(), &set)?;
            if let Some(out) = out {
                config.out = out;
            }
            commands::cmd_synth(&config)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
