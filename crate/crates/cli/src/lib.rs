//! Command-line pipeline around the `vdmforge` library.
//!
//! [`run`] is the whole program: `main` only forwards `argv` and exits with
//! the returned code, so tests drive commands in-process.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::json;
use thiserror::Error;
use vdmforge::ErrorClass;

pub mod args;
pub mod commands;
pub mod manifest;
pub mod record;
pub mod selftest;

pub use args::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

/// Environment fallback for `--threads`.
pub const THREADS_ENV: &str = "VDMFORGE_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Library(#[from] vdmforge::Error),
    /// A library failure while reading or writing `path`.
    #[error("{path}: {source}")]
    File { path: PathBuf, source: vdmforge::Error },
    #[error("{failed} self-test criteria failed")]
    CriteriaFailed { failed: usize },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io { path: path.to_path_buf(), source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) | CliError::Io { .. } => EXIT_DATA,
            CliError::Library(e) | CliError::File { source: e, .. } => match e.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
            CliError::CriteriaFailed { .. } => EXIT_NUMERICAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self.exit_code() {
            EXIT_USAGE => "usage",
            EXIT_NUMERICAL => "numerical",
            _ => "data",
        }
    }
}

/// Lifts any module error of the library.
pub fn lib(e: impl Into<vdmforge::Error>) -> CliError {
    CliError::Library(e.into())
}

/// Like [`lib`], naming the file involved.
pub fn at<E: Into<vdmforge::Error>>(path: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::File { path: path.to_path_buf(), source: e.into() }
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(n) = flag {
        return if n == 0 { Err(CliError::Usage("--threads must be at least 1".into())) } else { Ok(Some(n)) };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Failures print a JSON error object on stderr.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let code = e.exit_code();
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "code": code, "message": e.to_string() } }));
            code
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let threads = thread_count(cli.threads)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    pool.install(|| {
        let started = std::time::Instant::now();
        let mut record = commands::dispatch(&cli.command)?;
        record.seconds = started.elapsed().as_secs_f64();
        let path = cli.record.clone().unwrap_or_else(|| record.default_path());
        record.write(&path)
    })
}
