//! `layerflow`: synthesize layered datasets, train the decomposition model,
//! split images into layers, recomposite stacks, and score predictions.
//!
//! Exit codes are a stable scripting contract: 0 success, 1 validation
//! failure, 2 IO failure, 3 numeric failure.

mod commands;
mod config;
mod error;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "layerflow",
    version,
    about = "Layered image decomposition: data synthesis, training, sampling, evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic layered dataset
    GenData(commands::gen_data::GenDataArgs),
    /// Train the decomposition model on a dataset
    Train(commands::train::TrainArgs),
    /// Decompose a raster image into layers with a trained checkpoint
    Decompose(commands::decompose::DecomposeArgs),
    /// Alpha-composite a stored stack back into a flat image
    Composite(commands::composite::CompositeArgs),
    /// Score predicted stacks against ground truth
    Eval(commands::eval::EvalArgs),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData(args) => commands::gen_data::run(&args),
        Command::Train(args) => commands::train::run(&args),
        Command::Decompose(args) => commands::decompose::run(&args),
        Command::Composite(args) => commands::composite::run(&args),
        Command::Eval(args) => commands::eval::run(&args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
