use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use saddle_exit::experiment::{
    self, emit_report, limit_law_summary, normal_form_for, resonance_for, run_limit_law, run_simulation,
    simulation_summary, verification_summary, ExperimentConfig, Mode,
};
use saddle_exit::parallel::with_env_threads;
use saddle_exit::system_file::load_system;
use saddle_exit::{Error, Result};

const EXIT_STAT_FAIL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

#[derive(Parser)]
#[command(name = "saddle-exit", version, about = "Exit laws of small-noise diffusions near a planar saddle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Resonant multi-indices of the linear part, as JSON.
    Resonance {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 12)]
        rmax: u32,
    },
    /// Normal-form coefficient tables up to order R, as JSON.
    NormalForm {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        order: u32,
    },
    /// Two-stage exit ensembles over the configured ε grid.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the config's output directory.
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Limit-law parameters, and optionally draws from it.
    LimitLaw {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        samples: usize,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Monte Carlo against the limit law, with pass/fail per check.
    Verify {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
}

fn load_config(path: &Path, mode: Mode) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(path)?;
    c.mode = mode;
    Ok(c)
}

fn output_dir(c: &ExperimentConfig, over: Option<PathBuf>) -> PathBuf {
    over.unwrap_or_else(|| c.output_path())
}

/// Runs the command; `Ok(false)` means a statistical check failed.
fn run(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Resonance { system, rmax } => {
            let out = resonance_for(&load_system(&system)?, Some(rmax))?;
            println!("{}", serde_json::to_string_pretty(&out)?);
            Ok(out.violations.is_empty())
        }
        Command::NormalForm { system, order } => {
            let table = normal_form_for(&load_system(&system)?, order)?;
            println!("{}", serde_json::to_string_pretty(&table)?);
            Ok(true)
        }
        Command::Simulate { config, output_dir: o } => {
            let c = load_config(&config, Mode::Simulate)?;
            let dir = output_dir(&c, o);
            let (report, samples) = with_env_threads(|| run_simulation(c))??;
            let summary = simulation_summary(&report);
            emit_report(&report, &summary, &samples, &dir)?;
            print!("{summary}");
            Ok(true)
        }
        Command::LimitLaw { config, samples, output_dir: o } => {
            let c = load_config(&config, Mode::LimitLaw)?;
            let dir = output_dir(&c, o);
            let (report, sets) = with_env_threads(|| run_limit_law(c, samples))??;
            let summary = limit_law_summary(&report);
            emit_report(&report, &summary, &sets, &dir)?;
            print!("{summary}");
            Ok(true)
        }
        Command::Verify { config, output_dir: o } => {
            let c = load_config(&config, Mode::Verify)?;
            let dir = output_dir(&c, o);
            let run = with_env_threads(|| experiment::run_verification(c))??;
            let summary = verification_summary(&run.report);
            emit_report(&run.report, &summary, &run.samples, &dir)?;
            print!("{summary}");
            Ok(run.report.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_STAT_FAIL),
        Err(e) => {
            eprintln!("error: {e}");
            // A non-finite statistic comes from a degenerate ensemble, not a bad config.
            match e {
                Error::NonFinite(_) => ExitCode::from(EXIT_STAT_FAIL),
                _ => ExitCode::from(EXIT_CONFIG),
            }
        }
    }
}
