//! `kervar`: simulate nonlinear VARs, fit kernel ridge estimators, predict,
//! and run the empirical studies.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "kervar", version, about = "Kernel ridge regression for nonlinear vector autoregressions")]
struct Cli {
    /// Worker threads; 1 runs everything serially. Defaults to all logical cores.
    #[arg(long, global = true, env = "KERVAR_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StudyKind {
    Rate,
    Concentration,
    Mercer,
    Glambda,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate a trajectory and write it as `t,x1..xd` CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `t` in the config.
        #[arg(long)]
        t: Option<usize>,
        /// Manifest path; defaults to `<out>.manifest.json`.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Fit the kernel ridge estimator to a trajectory and persist the model.
    Fit {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides `data` in the config (resolved against the working directory).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides `lambda` in the config.
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a persisted model at the lag windows of an input CSV.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV with header `z1..z{dp}`, one lag window per row.
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Run a study and write its CSV tables, summary and manifest to a directory.
    Study {
        kind: StudyKind,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Overrides `seed` in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::config("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { config, out, seed, t, manifest } => {
            commands::simulate(&config, &out, seed, t, manifest.as_deref())
        }
        Command::Fit { config, out, data, lambda, manifest } => {
            commands::fit(&config, &out, data.as_deref(), lambda, manifest.as_deref())
        }
        Command::Predict { model, inputs, out, manifest } => {
            commands::predict(&model, &inputs, &out, manifest.as_deref())
        }
        Command::Study { kind, config, out_dir, seed } => commands::study(kind, &config, &out_dir, seed),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
