//! `gridnav` — command-line front end for the 2D point-goal navigation
//! stack: map generation, sweep-data collection, twin-VAE pretraining,
//! curriculum PPO training, evaluation, and figure export.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 training
//! divergence.

mod commands;
mod config;
mod manifest;
mod svg;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand, ValueEnum};
use commands::{CliError, PlotKind};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "gridnav", version, about = "2D point-goal navigation research stack")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlotKindArg {
    Curve,
    Paths,
    Bars,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random rooms-and-corridors map.
    GenMap {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 32)]
        width: usize,
        #[arg(long, default_value_t = 32)]
        height: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        cell_size: f64,
    },
    /// Collect the 360-degree sweep dataset for VAE training.
    Collect {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the twin VAE on a sweep dataset.
    TrainVae {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train the navigation policy with PPO under the configured
    /// curriculum.
    TrainPolicy {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Twin-VAE checkpoint (defaults to <out>/vae.ckpt).
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Start from an existing policy checkpoint (fine-tuning).
        #[arg(long)]
        init_from: Option<PathBuf>,
        /// Override curriculum.stage_scale.
        #[arg(long)]
        stage_scale: Option<f64>,
    },
    /// Generate the shared evaluation episode suite.
    GenSuite {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a policy checkpoint on a suite in greedy mode.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Policy checkpoint (defaults to <out>/policy.ckpt).
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Twin-VAE checkpoint (defaults to <out>/vae.ckpt).
        #[arg(long)]
        vae: Option<PathBuf>,
        /// Suite file (defaults to <out>/suite.txt).
        #[arg(long)]
        suite: Option<PathBuf>,
        /// Also write per-step trajectories to <out>/traces.txt.
        #[arg(long, default_value_t = false)]
        dump_traces: bool,
    },
    /// Render SVG figures from logs, traces, or reports.
    Plot {
        #[arg(long, value_enum)]
        kind: PlotKindArg,
        #[arg(long)]
        out: PathBuf,
        /// Map file (required for --kind paths).
        #[arg(long)]
        map: Option<PathBuf>,
        /// EMA weighting for curves.
        #[arg(long, default_value_t = 0.001)]
        alpha: f64,
        /// Curve metric: spl or success.
        #[arg(long, default_value = "spl")]
        metric: String,
        /// Input files (training logs, trace dumps, or reports).
        inputs: Vec<PathBuf>,
    },
}

fn load_config(
    path: &PathBuf,
    seed: Option<u64>,
    out: Option<PathBuf>,
    stage_scale: Option<f64>,
) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| CliError::Data(e.to_string()))?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(out) = out {
        cfg.out = out;
    }
    if let Some(scale) = stage_scale {
        cfg.curriculum_stage_scale = scale;
    }
    Ok(cfg)
}

fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::GenMap {
            out,
            width,
            height,
            seed,
            cell_size,
        } => commands::cmd_gen_map(&out, width, height, seed, cell_size),
        Command::Collect { config, seed, out } => {
            let cfg = load_config(&config, seed, out, None)?;
            commands::cmd_collect(&cfg)
        }
        Command::TrainVae {
            config,
            seed,
            out,
            dataset,
        } => {
            let cfg = load_config(&config, seed, out, None)?;
            commands::cmd_train_vae(&cfg, dataset)
        }
        Command::TrainPolicy {
            config,
            seed,
            out,
            vae,
            init_from,
            stage_scale,
        } => {
            let cfg = load_config(&config, seed, out, stage_scale)?;
            commands::cmd_train_policy(&cfg, vae, init_from)
        }
        Command::GenSuite { config, seed, out } => {
            let cfg = load_config(&config, seed, out, None)?;
            commands::cmd_gen_suite(&cfg)
        }
        Command::Eval {
            config,
            out,
            policy,
            vae,
            suite,
            dump_traces,
        } => {
            let cfg = load_config(&config, None, out, None)?;
            commands::cmd_eval(&cfg, policy, vae, suite, dump_traces)
        }
        Command::Plot {
            kind,
            out,
            map,
            alpha,
            metric,
            inputs,
        } => {
            let kind = match kind {
                PlotKindArg::Curve => PlotKind::Curve,
                PlotKindArg::Paths => PlotKind::Paths,
                PlotKindArg::Bars => PlotKind::Bars,
            };
            commands::cmd_plot(kind, &out, map, alpha, &metric, &inputs)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not usage errors.
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
