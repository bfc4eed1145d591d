//! Thin process wrapper: parse, run, print, exit.
//!
//! The report document goes to standard output; timing and every error go
//! to standard error, keeping stdout bit-for-bit reproducible.

use spreadbench::{execute, CliError};
use std::io::Write;

fn main() {
    match execute(std::env::args_os()) {
        Ok(report) => {
            print!("{}", report.render());
            eprintln!(
                "{}: completed in {:.3}ms",
                report.command,
                report.timing.as_secs_f64() * 1e3
            );
        }
        Err(CliError::HelpRequested(text)) => {
            println!("{text}");
        }
        Err(err) => {
            let _ = writeln!(std::io::stderr(), "error: {err}");
            std::process::exit(err.exit_code());
        }
    }
}
