use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = oml::cli::Cli::parse();
    match oml::cli::execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
