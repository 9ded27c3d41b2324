use std::process::ExitCode;

use clap::Parser;

mod cli;
mod commands;
mod failure;
mod output;

fn main() -> ExitCode {
    let args = cli::Cli::parse();
    match commands::run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code())
        }
    }
}
