//! `afm`: probabilistic multivariate time-series forecasting with
//! autoregressive flow matching.
//!
//! Subcommands: `simulate` (benchmark datasets), `train` (autoregressive
//! model or fixed-horizon baseline), `forecast` (sample ensembles + quantile
//! tables), `evaluate` (CRPS/NRMSE tables), `repro` (the whole pipeline).
//! Exit codes: 0 success, 2 validation error, 3 numerical failure.

mod commands;
mod config;
mod errors;
mod lockfile;
mod output;
mod presets;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "afm",
    version,
    about = "Probabilistic time-series forecasting with autoregressive flow matching"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a stochastic benchmark system into a dataset directory
    Simulate(commands::simulate::SimulateArgs),
    /// Train a model on a dataset and write its bundle
    Train(commands::train::TrainArgs),
    /// Sample forecast ensembles and quantiles from a trained model
    Forecast(commands::forecast::ForecastArgs),
    /// Score trained models on a dataset's test split
    Evaluate(commands::evaluate::EvaluateArgs),
    /// Run simulate, train, forecast, and evaluate end to end
    Repro(commands::repro::ReproArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate::run(a),
        Command::Train(a) => commands::train::run(a),
        Command::Forecast(a) => commands::forecast::run(a),
        Command::Evaluate(a) => commands::evaluate::run(a),
        Command::Repro(a) => commands::repro::run(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
