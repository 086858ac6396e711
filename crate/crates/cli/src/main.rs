//! `ocra`: pipeline orchestrator. Subcommands synth, reconstruct, track,
//! train, rollout, eval and plot compose the full chain; artifacts live
//! under the directory given by --data-dir, OCRA_DATA_DIR, or ./ocra-data.
//!
//! Exit codes: 0 ok, 1 usage or config error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::PipelineConfig;
use util::{data_dir, exit_code, EXIT_USAGE};

#[derive(Parser)]
#[command(name = "ocra", version, about = "Object-centric action transfer pipeline")]
struct Cli {
    /// Pipeline config JSON; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Artifact root (overrides OCRA_DATA_DIR).
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic demonstration dataset.
    Synth,
    /// Fuse per-frame multi-view depth into labeled point clouds.
    Reconstruct,
    /// Track the manipulated object with frame-to-frame ICP.
    Track,
    /// Train the diffusion policy on the tracked dataset.
    Train(TrainArgs),
    /// Execute seeded closed-loop rollouts of the trained policy.
    Rollout,
    /// Score rollouts against ground truth and classify outcomes.
    Eval,
    /// Render SVG figures and CSV data from logs and metrics.
    Plot,
}

#[derive(Args)]
struct TrainArgs {
    /// Optimization steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Action-chunk length.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["4", "8"]))]
    horizon: Option<String>,
    /// Observation frames fed to the policy.
    #[arg(long)]
    obs_horizon: Option<usize>,
    /// Force dimensions appended to each chunk step.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(["0", "1", "3"]))]
    force_dims: Option<String>,
    /// Pipeline seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Learning rate.
    #[arg(long)]
    lr: Option<f64>,
}

fn load_config(path: &Option<PathBuf>) -> ocra_core::Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn run(cli: Cli) -> Result<(), (i32, String)> {
    let mut cfg = load_config(&cli.config).map_err(|e| (EXIT_USAGE, e.to_string()))?;
    let root = data_dir(cli.data_dir.clone());
    std::fs::create_dir_all(&root)
        .map_err(|e| (util::EXIT_DATA, format!("{}: {e}", root.display())))?;

    if let Command::Train(args) = &cli.command {
        if let Some(s) = args.steps {
            cfg.train.steps = s;
        }
        if let Some(h) = &args.horizon {
            cfg.policy.horizon = h.parse().unwrap();
        }
        if let Some(o) = args.obs_horizon {
            cfg.policy.obs_horizon = o;
        }
        if let Some(f) = &args.force_dims {
            cfg.policy.force_dims = f.parse().unwrap();
        }
        if let Some(s) = args.seed {
            cfg.seed = s;
        }
        if let Some(lr) = args.lr {
            cfg.train.lr = lr;
        }
        cfg.validate().map_err(|e| (EXIT_USAGE, e.to_string()))?;
    }

    let result = match &cli.command {
        Command::Synth => commands::synth::run(&cfg, &root),
        Command::Reconstruct => commands::reconstruct::run(&cfg, &root),
        Command::Track => commands::track::run(&cfg, &root),
        Command::Train(_) => commands::train::run(&cfg, &root),
        Command::Rollout => commands::rollout::run(&cfg, &root),
        Command::Eval => commands::eval::run(&cfg, &root),
        Command::Plot => commands::plot::run(&cfg, &root),
    };
    result.map_err(|e| (exit_code(&e), e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are not usage errors
            let benign = matches!(
                e.kind(),
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion
            );
            let _ = e.print();
            return if benign {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_USAGE as u8)
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code as u8)
        }
    }
}
