//! `cipw` — policy-effect estimation under clustered interference.
//!
//! Subcommands: `fit` (propensity model), `estimate` (IPW estimates with
//! sandwich CIs), `simulate` (replication study), `truth` (empirical truth
//! tables). Flag values take precedence over `--config` file entries, which
//! take precedence over defaults.

mod commands;
mod config;
mod io;

use clap::{Parser, Subcommand};
use cipw_core::Error as CoreError;

#[derive(Parser)]
#[command(name = "cipw", version, about = "Policy-effect estimation under clustered interference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the logistic random-intercept propensity model to a CSV dataset.
    Fit(config::FitArgs),
    /// Estimate policy means and effects with sandwich-variance Wald CIs.
    Estimate(config::EstimateArgs),
    /// Run a replication study and summarize bias, coverage, ASE, ESE, SER.
    Simulate(config::SimulateArgs),
    /// Determine true estimand values empirically and compare ω with the
    /// independent-assignment weights.
    Truth(config::TruthArgs),
}

/// Exit codes: 2 schema/configuration, 3 convergence, 4 coverage/positivity,
/// 5 numerical.
fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<CoreError>() {
        Some(CoreError::Config(_)) | Some(CoreError::Domain(_)) | Some(CoreError::LayoutMismatch(_)) => 2,
        Some(CoreError::NoConvergence { .. })
        | Some(CoreError::Separation(_))
        | Some(CoreError::Solver(_)) => 3,
        Some(CoreError::Coverage { .. })
        | Some(CoreError::Positivity(_))
        | Some(CoreError::SizeCapExceeded { .. }) => 4,
        Some(CoreError::Underflow(_))
        | Some(CoreError::NonFinite { .. })
        | Some(CoreError::Singular { .. }) => 5,
        None => {
            if err.downcast_ref::<io::SchemaError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(args) => commands::fit::run(args),
        Command::Estimate(args) => commands::estimate::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
        Command::Truth(args) => commands::truth::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err:#}");
        std::process::exit(exit_code(&err));
    }
}
