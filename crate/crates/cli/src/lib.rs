//! The `tgi` command-line tool.
//!
//! Exit codes: 0 success, 2 usage, 3 file format or I/O, 4 compute.

pub mod commands;
pub mod config;
pub mod manifest;

use std::ffi::OsString;

use thiserror::Error;

pub use config::{parse_config, parse_config_with, RunConfig};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Clap(#[from] clap::Error),
    #[error("usage: {0}")]
    Usage(String),
    #[error("{0}")]
    Format(tgi_core::Error),
    #[error("{0}")]
    Compute(tgi_core::Error),
}

impl From<tgi_core::Error> for CliError {
    fn from(e: tgi_core::Error) -> Self {
        match e {
            tgi_core::Error::Format { .. } | tgi_core::Error::Io { .. } => CliError::Format(e),
            _ => CliError::Compute(e),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Clap(e) => e.exit_code(),
            CliError::Usage(_) => 2,
            CliError::Format(_) => 3,
            CliError::Compute(_) => 4,
        }
    }
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = parse_config(argv).and_then(|config| commands::execute(&config));
    match result {
        Ok(report) => {
            for line in report.lines {
                println!("{line}");
            }
            println!("manifest: {}", report.manifest_path.display());
            0
        }
        Err(CliError::Clap(e)) => {
            let _ = e.print();
            e.exit_code()
        }
        Err(e) => {
            eprintln!("tgi: {e}");
            e.exit_code()
        }
    }
}
