use std::panic;
use std::process::ExitCode;

use clap::Parser;
use emscreen::cli::{exit_code, run, RunConfig};

fn main() -> ExitCode {
    let config = RunConfig::parse();
    match panic::catch_unwind(|| run(&config)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("emscreen: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
        Err(_) => {
            eprintln!("emscreen: internal error (panic)");
            ExitCode::from(3)
        }
    }
}
