use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nhhmm::forecast::PredictionMode;
use nhhmm_cli::commands::{self, FitArgs, ForecastArgs, ReplicateArgs};
use nhhmm_cli::config::SweepOverrides;
use nhhmm_cli::error::CliResult;

#[derive(Parser)]
#[command(name = "nhhmm", version, about = "Bayesian non-homogeneous hidden Markov models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Bma,
    Map,
    Median,
}

impl From<Mode> for PredictionMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Bma => PredictionMode::Bma,
            Mode::Map => PredictionMode::MapModel,
            Mode::Median => PredictionMode::MedianModel,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a preset.
    Simulate {
        #[arg(long)]
        preset: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the sampler on a CSV dataset.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Append this many lags of y to the covariate pool.
        #[arg(long)]
        ar_lags: Option<usize>,
        /// Keep the initial model fixed.
        #[arg(long)]
        no_rj: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        sweeps: SweepOverrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build a predictive ensemble from a finished fit.
    Forecast {
        /// Output directory of `fit`.
        #[arg(long)]
        chain: PathBuf,
        /// Future covariate values, one row per horizon.
        #[arg(long)]
        future: PathBuf,
        #[arg(long)]
        horizons: usize,
        #[arg(long, value_enum, default_value = "bma")]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score an exported ensemble against realized values.
    Score {
        #[arg(long)]
        ensemble: PathBuf,
        #[arg(long)]
        actuals: PathBuf,
        /// Also write the per-horizon scores here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rerun a simulation study end to end.
    Replicate {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        sweeps: SweepOverrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn dispatch(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate { preset, seed, out } => {
            let dir = commands::simulate(&preset, seed, out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Fit {
            data,
            config,
            ar_lags,
            no_rj,
            seed,
            sweeps,
            out,
        } => {
            let dir = commands::fit(FitArgs {
                data: &data,
                config: config.as_deref(),
                ar_lags,
                no_rj,
                seed,
                sweeps: &sweeps,
                out: out.as_deref(),
            })?;
            println!("{}", dir.display());
        }
        Command::Forecast {
            chain,
            future,
            horizons,
            mode,
            seed,
            out,
        } => {
            let dir = commands::forecast(ForecastArgs {
                chain_dir: &chain,
                future: &future,
                horizons,
                mode: mode.into(),
                seed,
                out: out.as_deref(),
            })?;
            println!("{}", dir.display());
        }
        Command::Score { ensemble, actuals, out } => {
            let report = commands::score_files(&ensemble, &actuals)?;
            if let Some(p) = out {
                let f = std::fs::File::create(&p)?;
                report.write_csv(std::io::BufWriter::new(f))?;
            }
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Replicate {
            experiment,
            seed,
            config,
            sweeps,
            out,
        } => {
            let dir = commands::replicate(ReplicateArgs {
                experiment: &experiment,
                seed,
                config: config.as_deref(),
                sweeps: &sweeps,
                out: out.as_deref(),
            })?;
            println!("{}", dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
