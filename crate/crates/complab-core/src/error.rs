//! Error types shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
///
/// The variants map onto the process exit classes used by the CLI:
/// configuration problems exit with 2, numerical/runtime failures with 3.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration, parameters or inputs.
    #[error("config error: {0}")]
    Config(String),

    /// A point fell outside the model domain or an evaluation grid.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical procedure failed or produced non-finite values.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// Filesystem failure while writing reports.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Exit code class for the CLI (2 = config, 3 = numerical/io).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Domain(_) => 2,
            Error::Numerical(_) | Error::Io(_) => 3,
        }
    }

    /// Short machine-readable kind tag used in JSON error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Numerical(_) => "numerical",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
