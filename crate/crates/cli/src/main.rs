//! `synthctl`: reproducible synthetic-control pipelines over panel CSV files.

mod args;
mod commands;
mod config;
mod input;
mod output;

use std::process::ExitCode;

use clap::Parser;

use args::Cli;

/// A failed run. Usage problems exit with 2, data and model problems with 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data { kind: &'static str, message: String },
}

impl From<synthctl_core::Error> for Failure {
    fn from(e: synthctl_core::Error) -> Self {
        Failure::Data {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Data {
            kind: "IoError",
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        synthctl_core::Error::from(e).into()
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

fn report(kind: &str, message: &str) {
    let line = serde_json::json!({ "error": kind, "message": message });
    eprintln!("{line}");
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(msg) => {
            report("UsageError", &msg);
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    if let Some(n) = cli.common.jobs {
        if n == 0 {
            report("UsageError", "--jobs must be at least 1");
            return ExitCode::from(2);
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .expect("thread pool is configured once");
    }
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            report("UsageError", &msg);
            ExitCode::from(2)
        }
        Err(Failure::Data { kind, message }) => {
            report(kind, &message);
            ExitCode::from(1)
        }
    }
}
