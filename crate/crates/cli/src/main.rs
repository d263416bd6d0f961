use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hswarm_core::config::{Algo, RunConfig};
use hswarm_core::runner::{self, TrajSource};
use hswarm_core::Error;

/// Hilbert-guided multi-agent coverage: training and trajectory tools.
#[derive(Parser)]
#[command(name = "hswarm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write eval logs, checkpoints and summaries.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Desk preset used when no config file is given.
        #[arg(long, default_value = "hppo")]
        algo: String,
        /// Train only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Aggregate finished runs into a comparison table.
    Compare {
        runs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export a timed trajectory and a primitive program.
    ExportTraj {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(
            long,
            conflicts_with = "hilbert_sweep",
            required_unless_present = "hilbert_sweep"
        )]
        checkpoint: Option<PathBuf>,
        /// Follow the Hilbert ordering of the workspace instead of a policy.
        #[arg(long)]
        hilbert_sweep: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a trajectory file against the speed limits.
    ValidateTraj {
        trajectory: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::Training(_) => 3,
        Error::Validation(_) => 4,
        Error::Checkpoint(_) => 5,
        _ => 1,
    }
}

fn load_config(path: Option<&Path>, algo: &str) -> hswarm_core::Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::desk(algo.parse::<Algo>()?)),
    }
}

fn output_root(flag: Option<PathBuf>, cfg: &RunConfig) -> PathBuf {
    flag.or_else(|| std::env::var_os("HSWARM_OUT").map(PathBuf::from))
        .unwrap_or_else(|| cfg.out.clone())
}

fn print_json<T: serde::Serialize>(value: &T) -> hswarm_core::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> hswarm_core::Result<()> {
    match cli.command {
        Command::Train {
            config,
            algo,
            seed,
            out,
        } => {
            let mut cfg = load_config(config.as_deref(), &algo)?;
            if let Some(s) = seed {
                cfg = cfg.for_seed(s);
            }
            let root = output_root(out, &cfg);
            let summary = runner::cmd_train(&cfg, &root)?;
            print_json(&summary.metrics)?;
            eprintln!("wrote {}", root.join(&cfg.run_id).display());
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
        } => print_json(&runner::cmd_eval(&checkpoint, episodes, seed)?)?,
        Command::Compare { runs, out } => {
            let cmp = runner::cmd_compare(&runs)?;
            print!("{}", cmp.to_text());
            if let Some(path) = out {
                cmp.write_csv(&path)?;
            }
        }
        Command::ExportTraj {
            config,
            checkpoint,
            hilbert_sweep,
            out,
        } => {
            let cfg = match (&config, &checkpoint) {
                (Some(p), _) => RunConfig::load(p)?,
                (None, Some(ck)) => runner::Checkpoint::load(ck)?.run_config()?,
                (None, None) => RunConfig::desk(Algo::Hppo),
            };
            let source = match checkpoint {
                Some(p) if !hilbert_sweep => TrajSource::Checkpoint(p),
                _ => TrajSource::HilbertSweep,
            };
            let dir = output_root(out, &cfg).join("trajectory");
            print_json(&runner::cmd_export_traj(&cfg, &source, &dir)?)?;
        }
        Command::ValidateTraj { trajectory, config } => {
            let cfg = load_config(config.as_deref(), "hppo")?;
            print_json(&runner::cmd_validate_traj(&trajectory, &cfg)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
