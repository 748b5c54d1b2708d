use std::process::ExitCode;

use clap::Parser;
use perfpred_cli::{execute, Cli};

fn main() -> ExitCode {
    // Usage errors exit 1; status 2 is reserved for non-convergence.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
