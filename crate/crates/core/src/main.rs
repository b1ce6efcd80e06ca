use std::process::ExitCode;

use clap::Parser;
use spopo::cli::{run, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verbose && std::env::var_os("RUST_BACKTRACE").is_none() {
        std::env::set_var("RUST_BACKTRACE", "1");
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.verbose {
                eprintln!("error: {e:?}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}
