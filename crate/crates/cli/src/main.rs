use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gdp_dro::maghp::ModelKind;
use thiserror::Error;

mod commands;
mod config;

use config::PipelineConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),
    #[error("{0}")]
    Domain(String),
}

impl CliError {
    fn domain(context: &str, e: impl std::fmt::Display) -> Self {
        CliError::Domain(format!("{context}: {e}"))
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Domain(format!("{}: {e}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Config(_) | CliError::MissingInput(_) => 2,
        }
    }
}

#[derive(Parser)]
#[command(name = "gdp-dro", version, about = "Airport capacity scenarios and ground delay planning")]
struct Cli {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Capacity observations from operation records.
    Estimate,
    /// Train per-series predictors and forecast the test day.
    Predict,
    /// Scenario trees from predicted series; writes an instance when a schedule is configured.
    ReduceScenarios,
    /// Solve one model on the instance.
    Solve {
        #[arg(long, default_value = "dr")]
        model: ModelKind,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        /// Seconds.
        #[arg(long)]
        time_limit: Option<f64>,
    },
    /// Score solved policies on shifted capacity samples.
    Evaluate {
        #[arg(long = "result", required = true)]
        results: Vec<PathBuf>,
    },
    /// Solve det, sp and dr over a radius grid and score them.
    Sweep {
        /// Comma-separated radii.
        #[arg(long, value_delimiter = ',')]
        epsilons: Option<Vec<f64>>,
    },
    /// Write a synthetic fixture and a config that uses it.
    Fixture {
        /// Target directory.
        dir: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = out.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Estimate => commands::estimate(&cfg),
        Command::Predict => commands::predict(&cfg),
        Command::ReduceScenarios => commands::reduce_scenarios(&cfg),
        Command::Solve {
            model,
            epsilon,
            time_limit,
        } => {
            if !(epsilon >= 0.0 && epsilon.is_finite()) {
                return Err(CliError::Config(format!("--epsilon {epsilon} must be non-negative")));
            }
            if let Some(t) = time_limit {
                cfg.solver.time_limit = t;
            }
            cfg.validate()?;
            commands::solve(&cfg, model, epsilon).map(|_| ())
        }
        Command::Evaluate { results } => commands::evaluate_results(&cfg, &results),
        Command::Sweep { epsilons } => {
            if let Some(e) = epsilons {
                cfg.epsilons = e;
            }
            cfg.validate()?;
            commands::sweep(&cfg)
        }
        Command::Fixture { dir } => commands::fixture(&cfg, &dir),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
