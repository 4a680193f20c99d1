//! `rasp-evt`: density, orbit, extreme value and diagnostic experiments for
//! random maps with aleatory state resets.

mod commands;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rasp_evt::config::ExperimentConfig;

#[derive(Parser, Debug)]
#[command(
    name = "rasp-evt",
    version,
    about = "Extreme value experiments for randomly perturbed piecewise contracting maps"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Experiment config file (`key = value` lines).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Master seed, overriding the config.
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,

    /// Number of worker threads.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,

    /// Output root directory, overriding the config.
    #[arg(long, global = true, value_name = "DIR", env = "RASP_EVT_OUTPUT")]
    output: Option<String>,

    /// Ten times smaller budgets.
    #[arg(long, global = true)]
    quick: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Closed-form, Ulam and histogram densities on the configured grid.
    Density,
    /// One random orbit with its map/reset events.
    Orbit {
        /// Starting point (comma separated); a uniform draw when omitted.
        #[arg(long, value_name = "X", allow_hyphen_values = true)]
        x0: Option<String>,
        /// Number of steps; defaults to `run.n`.
        #[arg(long)]
        steps: Option<usize>,
        /// Random stream index.
        #[arg(long, default_value_t = 0)]
        stream: u64,
    },
    /// Block maxima, Gumbel comparison and extremal index estimates.
    Evt {
        /// Cut one long orbit into blocks instead of restarting each block.
        #[arg(long)]
        sliced: bool,
    },
    /// Correlation decay, return probabilities and short-return sums.
    Diagnose,
    /// Runs the acceptance suite.
    Validate {
        /// Added to the noise level simulated by the extremal index criterion.
        #[arg(long, default_value_t = 0.0, value_name = "DELTA", allow_hyphen_values = true)]
        epsilon_offset: f64,
        /// Run only these criteria (comma separated ids).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u8>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] rasp_evt::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{failed} acceptance criteria failed")]
    Acceptance { failed: usize },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_config() => 2,
            CliError::Io { .. } => 3,
            CliError::Acceptance { .. } => 4,
            _ => 1,
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig, CliError> {
    let mut config = match &global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    if let Some(out) = &global.output {
        config.output = out.clone();
    }
    if global.quick {
        config.run.blocks = (config.run.blocks / 10).max(1);
        config.run.budget = (config.run.budget / 10).max(1);
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let config = load_config(&cli.global)?;
    let go = || match cli.command {
        Command::Density => commands::density(&config),
        Command::Orbit { x0, steps, stream } => commands::orbit(&config, x0.as_deref(), steps, stream),
        Command::Evt { sliced } => commands::evt(&config, sliced),
        Command::Diagnose => commands::diagnose(&config),
        Command::Validate { epsilon_offset, only } => {
            commands::validate(&config, cli.global.seed, cli.global.quick, epsilon_offset, &only)
        }
    };
    match cli.global.workers {
        Some(0) => Err(rasp_evt::Error::config("workers", "must be at least 1").into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Other(e.to_string()))?
            .install(go),
        None => go(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
