//! `epidiffuse` command-line front end.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "epidiffuse",
    version,
    about = "Reaction-diffusion epidemic simulation and parameter estimation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Seed for every random component.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Solver backend: cn | fem-split.
    #[arg(long)]
    pub backend: Option<String>,
    /// Output directory; defaults to `output.dir` from the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Forward run from the configured initial parameters.
    Simulate(Common),
    /// Estimate parameters against the configured case data.
    Fit {
        #[command(flatten)]
        common: Common,
        /// metropolis | adjoint | simulate-only
        #[arg(long)]
        estimator: Option<String>,
        /// Number of Metropolis draws.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Compare the adjoint gradient with central finite differences.
    GradientCheck {
        #[command(flatten)]
        common: Common,
        /// Relative finite-difference step.
        #[arg(long, default_value_t = 1e-6)]
        rel_step: f64,
        /// Largest accepted relative error.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
    /// Temporal refinement study for pure diffusion and the coupled system.
    ConvergenceStudy(Common),
    /// Daily and cumulative observed-versus-model tables per region.
    ExportPlots {
        #[command(flatten)]
        common: Common,
        /// Fit report whose estimate is plotted; defaults to `fit_report.json` in the output directory.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write a synthetic case file from the `[synthetic]` truth.
    Synthesize {
        #[command(flatten)]
        common: Common,
        /// Relative noise level.
        #[arg(long)]
        noise: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let (config, result) = match cli.command {
        Command::Simulate(c) => (c.config.clone(), commands::simulate(&c)),
        Command::Fit {
            common,
            estimator,
            draws,
        } => (common.config.clone(), commands::fit(&common, estimator, draws)),
        Command::GradientCheck {
            common,
            rel_step,
            tolerance,
        } => (
            common.config.clone(),
            commands::gradient_check(&common, rel_step, tolerance),
        ),
        Command::ConvergenceStudy(c) => (c.config.clone(), commands::convergence_study(&c)),
        Command::ExportPlots { common, report } => (common.config.clone(), commands::export_plots(&common, report)),
        Command::Synthesize { common, noise } => (common.config.clone(), commands::synthesize(&common, noise)),
    };
    match result {
        Ok(summary) => {
            println!("{}", summary.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (category, code) = commands::classify(&e);
            eprintln!("epidiffuse: {category} error ({}): {e:#}", config.display());
            ExitCode::from(code)
        }
    }
}
