//! Command-line entry points: `wcc fit`, `wcc simulate` and `wcc config`.
//!
//! Each command returns a process exit code. 0 is success, 2 a validation
//! error (bad flags, malformed input) and 3 a fatal solver error.

use std::ffi::OsString;
use std::io::Write;

use clap::{Parser, Subcommand};
use wcc_core::WccError;

pub mod config;
pub mod fit;
pub mod simulate;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;

/// Version of the JSON report layout written by `fit`.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "wcc", version, about = "Weighted clustered-coefficients regression")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a dataset from CSV, selecting λ by modified BIC unless fixed.
    Fit(fit::FitArgs),
    /// Run a Monte Carlo study under Poisson sampling.
    Simulate(simulate::SimulateArgs),
    /// Print the version and the defaults in force.
    Config,
}

/// Exit code for a core error.
pub fn exit_code(err: &WccError) -> i32 {
    if err.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_SOLVER
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing normal output to `out` and diagnostics to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                out.write_all(rendered.as_bytes())
            } else {
                err.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(args) => fit::run(&args, out),
        Command::Simulate(args) => simulate::run(&args, out),
        Command::Config => config::run(out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
