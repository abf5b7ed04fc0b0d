use std::process::ExitCode;

use clap::Parser;
use musmse_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("musmse: {e}");
            e.into()
        }
    }
}
