//! Command-line front end for the trace-mining pipeline.
//!
//! Subcommands mirror the processing stages: `simulate` generates
//! synthetic rider traces with ground truth, `preprocess` cleans traces,
//! `sweep` evaluates clustering parameters against truth,
//! `detect-stations` builds the stations database, `fit-delays` fits
//! per-element delay distributions, `eta` answers vehicle-view and
//! station-view arrival queries, `distributions` emits plot-ready PDF/CDF
//! grids, and `pipeline` chains the whole flow and writes a summary
//! report.
//!
//! Configuration comes from an optional JSON file plus flag overrides;
//! flags win. Every run is deterministic given identical inputs and
//! seeds, and the effective configuration is embedded in machine-readable
//! reports for provenance.

mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "railtrace", version, about = "Light-rail structure and schedule mining from rider GPS traces")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic rider traces, ground truth, and a network file.
    Simulate(commands::SimulateArgs),
    /// Clean trace files (outlier removal, smoothing + density filter,
    /// duplicate removal).
    Preprocess(commands::PreprocessArgs),
    /// Sweep clustering parameters against ground truth and emit ROC data.
    Sweep(commands::SweepArgs),
    /// Discover stop places and build the stations database.
    DetectStations(commands::DetectStationsArgs),
    /// Extract delay samples and fit per-element distributions.
    FitDelays(commands::FitDelaysArgs),
    /// Answer an ETA query (vehicle view or station view).
    Eta(commands::EtaArgs),
    /// Emit PDF/CDF sample grids for fitted distributions as CSV.
    Distributions(commands::DistributionsArgs),
    /// Run simulate -> preprocess -> detect-stations -> fit-delays and
    /// write a summary report.
    Pipeline(commands::PipelineArgs),
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => commands::simulate(args),
        Command::Preprocess(args) => commands::preprocess(args),
        Command::Sweep(args) => commands::sweep(args),
        Command::DetectStations(args) => commands::detect_stations(args),
        Command::FitDelays(args) => commands::fit_delays(args),
        Command::Eta(args) => commands::eta(args),
        Command::Distributions(args) => commands::distributions(args),
        Command::Pipeline(args) => commands::pipeline(args),
    }
}
