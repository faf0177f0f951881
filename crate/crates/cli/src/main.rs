use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use combtrack::config::ExperimentConfig;
use combtrack::pipeline::{self, Method};
use combtrack::CliError;

#[derive(Parser)]
#[command(
    name = "combtrack",
    version,
    about = "Simulates multi-line beat records and characterizes their phase noise"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    /// Extended Kalman smoothing with EM-learned noise parameters.
    Ml,
    /// Per-line bandpass filtering and phase extraction.
    Conventional,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Ml => Method::Ml,
            MethodArg::Conventional => Method::Conventional,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate ground-truth phases and signal files from a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Replace the config's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate phases and noise statistics from a signal file.
    Characterize {
        /// Signal file to analyze.
        signal: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rebuild a numerical figure of the study (2 or 3) end to end.
    ReproduceFig {
        /// Figure number.
        figure: u32,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(
    path: &Path,
    seed: Option<u64>,
    out: Option<&PathBuf>,
) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::from_path(path)?;
    cfg.apply_overrides(seed, out.map(|p| p.as_path()));
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    match cli.command {
        Command::Simulate { config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            pipeline::cmd_simulate(&cfg)
        }
        Command::Characterize { signal, config, method, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            pipeline::cmd_characterize(&signal, method.into(), &cfg)
        }
        Command::ReproduceFig { figure, config, seed, out } => {
            let cfg = load_config(&config, seed, out.as_ref())?;
            pipeline::cmd_reproduce_fig(figure, &cfg)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(written) => {
            for path in written {
                println!("{}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
