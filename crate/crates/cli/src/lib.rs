//! Driver for the `tqhom` binary: configuration, dispatch and artifacts.

pub mod config;
pub mod run;

pub use config::{parse_config, RunConfig};
pub use run::{execute, Command, Outcome, Overrides};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("schema error at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("range error: {0}")]
    Range(String),
    #[error("this command needs a `{0}` section in the configuration")]
    MissingSection(&'static str),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] tqhom::Error),
}

impl Outcome {
    /// 0 when every solve converged and every check passed, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.ok {
            0
        } else {
            1
        }
    }
}

/// Exit status of a failed run.
pub const ERROR_EXIT: i32 = 2;
