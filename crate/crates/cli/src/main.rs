//! `tgedmd`: simulate, sample, estimate and post-process Koopman generator
//! experiments from one configuration file.

mod commands;
mod config;
mod error;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::Context;
use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "tgedmd", version, about = "Tensor-train generator EDMD experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration (TOML, or JSON by extension).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Maximum number of concurrent jobs.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Replaces every seed list of the configuration by this seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the SDE once per seed.
    Simulate,
    /// Draw mixture samples once per seed.
    SampleGmm,
    /// tgEDMD over the threshold sweep.
    Run,
    /// Dense AMUSE over the same sweep.
    Gedmd,
    /// Cost-model table from a prior run.
    Cost,
    /// Metastable clustering of every data set.
    Cluster,
}

fn context(cli: &Cli) -> CliResult<Context> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    if cli.jobs == 0 {
        return Err(CliError::Config("--jobs must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let out = cli.out.clone().unwrap_or_else(|| config.out.clone());
    Ok(Context { config, out, pool })
}

fn print_paths(paths: &[PathBuf]) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let ctx = context(cli)?;
    match cli.command {
        Command::Simulate => print_paths(&commands::simulate(&ctx)?),
        Command::SampleGmm => print_paths(&commands::sample_gmm(&ctx)?),
        Command::Run | Command::Gedmd => {
            let report = if matches!(cli.command, Command::Run) {
                commands::run(&ctx)?
            } else {
                commands::gedmd(&ctx)?
            };
            for row in &report.summary {
                let ts: Vec<String> = row
                    .mean
                    .iter()
                    .zip(&row.stderr)
                    .map(|(m, s)| match (m, s) {
                        (Some(m), Some(s)) => format!("{m:.3}+-{s:.3}"),
                        (Some(m), None) => format!("{m:.3}"),
                        _ => "inf".into(),
                    })
                    .collect();
                println!(
                    "eps {:e} m {}: t = {} (max rank {}-{})",
                    row.epsilon,
                    row.samples,
                    ts.join(" "),
                    row.max_rank_min,
                    row.max_rank_max
                );
            }
        }
        Command::Cost => println!("{}", commands::cost(&ctx)?.display()),
        Command::Cluster => print_paths(&commands::cluster_sets(&ctx)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tgedmd: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
