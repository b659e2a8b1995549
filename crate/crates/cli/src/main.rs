use std::process::ExitCode;

use bets_cli::app::{error_record, execute, Cli};
use clap::Parser;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(cli.command.name(), &e));
            ExitCode::FAILURE
        }
    }
}
