use std::process::ExitCode;

use clap::Parser;
use degen_spde::cli::{run, Cli};
use degen_spde::Error;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: task invariants failed; see summary.json", cli.command.task().name());
            ExitCode::from(1)
        }
        Err(Error::Config(list)) => {
            eprintln!("invalid configuration:");
            for v in list {
                eprintln!("  - {v}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}
