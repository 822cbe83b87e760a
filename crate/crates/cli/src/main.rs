use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use dimapg::harness::{
    self, cmd_eval, cmd_train, dump_trajectory, load_config, parse_override, trajectory_csv, EvalMode,
    EvalOptions, TrainOptions,
};

#[derive(Parser)]
#[command(name = "dimapg", about = "Train and evaluate DiMA-PG policies on multi-agent environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Independent runs with seeds seed, seed+1, ...
        #[arg(long, default_value_t = 1)]
        runs: usize,
        /// Override a config entry, e.g. `--set k=0`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// central, adapted or finetune
        #[arg(long, default_value = "central")]
        mode: String,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Run config; defaults to `resolved_config` beside the checkpoint.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Single-agent checkpoint deployed on every agent in finetune mode.
        #[arg(long)]
        finetune_checkpoint: Option<PathBuf>,
        /// Write the per-episode CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Print one untrained-policy episode as trajectory CSV.
    DumpEnv {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Compare against an earlier dump instead of printing.
        #[arg(long)]
        replay: Option<PathBuf>,
    },
}

fn overrides(raw: &[String]) -> Result<Vec<(String, String)>> {
    Ok(raw.iter().map(|s| parse_override(s)).collect::<dimapg::Result<_>>()?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            runs,
            overrides: raw,
            quiet,
        } => {
            let opts = TrainOptions {
                config,
                seed,
                out,
                runs,
                overrides: overrides(&raw)?,
                deterministic: harness::deterministic_from_env(),
            };
            let dirs = cmd_train(&opts, |run, m| {
                if !quiet {
                    eprintln!(
                        "run {run} iter {:>4}  episodes {:>7}  mean {:>10.4}  min-agent {:>10.4}  |g| {:.3e}",
                        m.iteration, m.episodes, m.mean_return, m.min_agent_return, m.grad_norm
                    );
                }
            })?;
            for d in dirs {
                println!("{}", d.display());
            }
        }
        Command::Eval {
            checkpoint,
            mode,
            episodes,
            seed,
            config,
            finetune_checkpoint,
            csv,
            overrides: raw,
        } => {
            let Some(mode) = EvalMode::parse(&mode) else {
                bail!("unknown mode `{mode}` (expected central, adapted or finetune)");
            };
            let summary = cmd_eval(&EvalOptions {
                checkpoint,
                mode,
                episodes,
                seed,
                config,
                finetune_checkpoint,
                overrides: overrides(&raw)?,
            })?;
            match csv {
                Some(path) => {
                    fs::write(&path, summary.to_csv()).with_context(|| format!("writing {}", path.display()))?;
                    print!("{}", summary.human());
                }
                None => {
                    print!("{}", summary.to_csv());
                    eprint!("{}", summary.human());
                }
            }
        }
        Command::DumpEnv {
            config,
            steps,
            overrides: raw,
            replay,
        } => {
            let config = load_config(&config, &overrides(&raw)?)?;
            match replay {
                Some(path) => {
                    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
                    if !harness::replay_matches(&config, &text)? {
                        bail!("replay of {} diverged", path.display());
                    }
                    println!("replay matches");
                }
                None => print!("{}", trajectory_csv(&dump_trajectory(&config, steps)?)),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
