use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = keymix_cli::Cli::parse();
    match keymix_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
