//! `unipunc`: train, evaluate and run the punctuation model.

mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "unipunc", version, about = "Punctuation restoration for transcripts with or without audio")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model; writes vocabulary, checkpoints and a metric log
    Train(commands::TrainArgs),
    /// Score a checkpoint on a corpus
    Eval(commands::EvalArgs),
    /// Punctuate plain text lines, with optional feature files
    Punctuate(commands::PunctuateArgs),
    /// Corpus statistics
    Stats(commands::StatsArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Punctuate(a) => commands::punctuate(a),
        Command::Stats(a) => commands::stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
