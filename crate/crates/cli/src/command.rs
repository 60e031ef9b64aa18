//! The `iro` command line, callable in-process with an argument list.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand};

use crate::config::{data_dir_from_env, ExperimentConfig};
use crate::{exit_code, pipeline, reproduce, Target};

#[derive(Parser)]
#[command(name = "iro", version, about = "Imprecise risk optimisation experiments")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train and test domains as CSV.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's seeds with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the configured method, writing checkpoints and traces.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint against the ideal per-level learners.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "model")]
        label: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute max-regret from a curves.csv file.
    Regret {
        #[arg(long)]
        curves: PathBuf,
        #[arg(long, default_value = "ideal")]
        ideal_label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run a table or figure of the experiments.
    Reproduce {
        target: Target,
        /// Fraction of the full experiment size.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
}

fn seeds(config: &ExperimentConfig, seed: Option<u64>) -> Vec<u64> {
    seed.map_or_else(|| config.seeds.clone(), |s| vec![s])
}

fn output(config: &ExperimentConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| config.output_dir.clone())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| iro_core::Error::Config(format!("--threads {threads}: {e}")))?;
    }
    let data_dir = data_dir_from_env();
    let data_dir = data_dir.as_deref();
    match cli.command {
        Command::GenData { config, seed, out } => {
            let c = ExperimentConfig::load(&config)?;
            pipeline::gen_data(&c, &seeds(&c, seed), data_dir, &output(&c, out))?;
        }
        Command::Train { config, seed, out } => {
            let c = ExperimentConfig::load(&config)?;
            pipeline::train(&c, &seeds(&c, seed), data_dir, &output(&c, out))?;
        }
        Command::Eval { config, checkpoint, label, seed, out } => {
            let c = ExperimentConfig::load(&config)?;
            let seed = seed.unwrap_or(c.seeds[0]);
            pipeline::eval(&c, &checkpoint, &label, seed, data_dir, &output(&c, out))
                .with_context(|| format!("evaluating {}", checkpoint.display()))?;
        }
        Command::Regret { curves, ideal_label, out } => {
            pipeline::regret(&curves, &ideal_label, &out)?;
        }
        Command::Reproduce { target, scale, seed, out } => {
            reproduce(target, scale, seed, data_dir, &out)?;
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status. Errors are reported on stderr.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            // clap reports usage errors with status 2, help and version with 0
            return err.exit_code() as u8;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err:#}");
            err.chain().find_map(|e| e.downcast_ref::<iro_core::Error>()).map_or(1, exit_code)
        }
    }
}
