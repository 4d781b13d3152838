//! `nrhosk`: baseline generation, closed-loop runs, Monte-Carlo campaigns,
//! and plot-table export.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

use config::CliConfig;

#[derive(Parser)]
#[command(name = "nrhosk", version, about = "NRHO station-keeping simulator")]
struct Cli {
    /// JSON configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides scenario.rng_seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for Monte-Carlo samples (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate and refine a baseline NRHO and write it to disk.
    GenerateBaseline {
        /// Overrides baseline.revolutions.
        #[arg(long)]
        revolutions: Option<usize>,
        /// Baseline file to write; defaults to baseline_path.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// One closed-loop run.
    Run {
        /// Baseline file; defaults to baseline_path.
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Overrides scenario.n_revolutions.
        #[arg(long)]
        revolutions: Option<usize>,
    },
    /// Independent closed-loop samples and their aggregate statistics.
    MonteCarlo {
        #[arg(long)]
        baseline: Option<PathBuf>,
        /// Overrides samples.
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        revolutions: Option<usize>,
    },
    /// Plot-ready tables from a run directory (writes to <RUN_DIR>/figures
    /// unless --out is given).
    Analyze { run_dir: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        cfg.scenario.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if jobs == 0 {
        anyhow::bail!("--jobs must be at least 1");
    }
    match cli.command {
        Command::GenerateBaseline { revolutions, output } => {
            if let Some(n) = revolutions {
                cfg.baseline.revolutions = n;
            }
            cfg.validate()?;
            let output = output.unwrap_or_else(|| cfg.baseline_path.clone());
            commands::generate_baseline_cmd(&cfg, &output)
        }
        Command::Run { baseline, revolutions } => {
            apply(&mut cfg, baseline, revolutions, None)?;
            commands::run_cmd(&cfg, &cfg.output_dir)
        }
        Command::MonteCarlo {
            baseline,
            samples,
            revolutions,
        } => {
            apply(&mut cfg, baseline, revolutions, samples)?;
            commands::monte_carlo_cmd(&cfg, &cfg.output_dir, jobs)
        }
        Command::Analyze { run_dir } => {
            let out = cli.out.unwrap_or_else(|| run_dir.join("figures"));
            commands::analyze_cmd(&run_dir, &out, &cfg)
        }
    }
}

fn apply(cfg: &mut CliConfig, baseline: Option<PathBuf>, revolutions: Option<usize>, samples: Option<usize>) -> anyhow::Result<()> {
    if let Some(b) = baseline {
        cfg.baseline_path = b;
    }
    if let Some(n) = revolutions {
        cfg.scenario.n_revolutions = n;
    }
    if let Some(n) = samples {
        cfg.samples = n;
    }
    cfg.validate()
}
