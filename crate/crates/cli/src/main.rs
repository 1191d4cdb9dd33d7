//! `crib`: sweeps over the memory model with CSV or JSON output.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{CommandFactory, Parser};

use config::{Args, CliError};

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            eprintln!("\n{}", Args::command().render_usage());
            return ExitCode::from(2);
        }
    };
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("crib: {e}");
            if let CliError::Config(_) = e {
                eprintln!("\n{}", Args::command().render_usage());
            }
            ExitCode::from(e.exit_code())
        }
    }
}

fn run(args: Args) -> Result<(), CliError> {
    let settings = config::resolve(args)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start worker pool: {e}")))?;
    let table = pool.install(|| commands::run(&settings))?;
    output::write(&settings, &table)
}
