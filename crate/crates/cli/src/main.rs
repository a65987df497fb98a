use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use kshot_cli::{
    cmd_baseline, cmd_oracle, cmd_report, cmd_search, cmd_train, exit_code, load_config, Overrides, CHECKPOINT_FILE,
};
use kshot_core::baselines::BaselineKind;
use kshot_core::{Error, Result};

#[derive(Parser)]
#[command(name = "kshot", version, about = "K-shot supernet training, search and ranking")]
struct Cli {
    /// TOML experiment config; built-in defaults when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overrides the number of weight copies per slot.
    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a K-shot supernet and its simplex-net.
    Train {
        /// Checkpoint destination [default: <out>/checkpoint.json].
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Train every subnet from scratch into <out>/oracle (resumable).
    Oracle,
    /// Evolutionary search on a trained checkpoint.
    Search {
        /// [default: <out>/checkpoint.json]
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Rank-correlation report of checkpoints against the oracle.
    Report {
        /// Repeat to compare several checkpoints [default: <out>/checkpoint.json].
        #[arg(long, value_name = "PATH")]
        checkpoint: Vec<PathBuf>,
    },
    /// Train and rank one ablation arm.
    Baseline {
        /// one_shot, fixed_code, random_code, ensemble_avg or ensemble_max
        /// [default: the config's `baseline`].
        #[arg(long, value_name = "KIND")]
        baseline: Option<String>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let overrides = Overrides {
        seed: cli.seed,
        out: cli.out,
        k: cli.k,
    };
    let cfg = load_config(cli.config.as_deref(), &overrides)?;
    let default_ckpt = || cfg.out_dir.join(CHECKPOINT_FILE);
    match cli.command {
        Command::Train { checkpoint } => {
            let path = cmd_train(&cfg, checkpoint.as_deref())?;
            println!("{}", path.display());
        }
        Command::Oracle => {
            let table = cmd_oracle(&cfg)?;
            println!("oracle: {} rows, {} steps per subnet", table.rows.len(), table.meta.steps);
        }
        Command::Search { checkpoint } => {
            let outcome = cmd_search(&cfg, &checkpoint.unwrap_or_else(default_ckpt))?;
            let best = outcome.best();
            println!(
                "best {} score={:.4} flops={} after {} evaluations",
                best.subnet.label(),
                best.score,
                best.flops,
                outcome.evaluations
            );
        }
        Command::Report { mut checkpoint } => {
            if checkpoint.is_empty() {
                checkpoint.push(default_ckpt());
            }
            print!("{}", cmd_report(&cfg, &checkpoint)?);
        }
        Command::Baseline { baseline } => {
            let kind = match baseline {
                Some(name) => name.parse::<BaselineKind>()?,
                None => cfg
                    .baseline
                    .ok_or_else(|| Error::Config("no baseline given; pass --baseline or set `baseline`".into()))?,
            };
            print!("{}", cmd_baseline(&cfg, kind)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
