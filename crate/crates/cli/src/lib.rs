//! Command-line pipeline around the fusemetrics library: dataset manifests,
//! layered configuration, batch orchestration and report emission.

pub mod cli;
pub mod config;
pub mod manifest;
pub mod report;
pub mod runner;

use clap::Parser;

/// Failure that aborts a run, carrying the process exit code to use.
#[derive(Debug)]
pub enum RunError {
    /// Bad flags or invalid configuration values.
    Usage(String),
    /// Unreadable input, unwritable output, malformed data files.
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            RunError::Usage(m) | RunError::Io(m) => m,
        }
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> RunError {
    RunError::Usage(msg.into())
}

pub(crate) fn io_error(msg: impl Into<String>) -> RunError {
    RunError::Io(msg.into())
}

/// Parse arguments, run the selected subcommand and return the process
/// exit code: 0 on success, 1 for usage errors, 2 for i/o errors, 3 when
/// at least one case in a batch failed.
pub fn run() -> i32 {
    let cli = match cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match runner::execute(cli) {
        Ok(0) => 0,
        Ok(_) => 3,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("FUSEMETRICS_LOG", "warn");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}
