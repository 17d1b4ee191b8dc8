use std::process::ExitCode;

use clap::Parser;
use duality_bench::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(outcome) => ExitCode::from(outcome.exit_code()),
        Err(e) => {
            eprintln!("duality-bench: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
