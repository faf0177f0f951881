use std::path::PathBuf;

/// Top-level failure modes, each mapped to a process exit code: usage and
/// configuration problems exit 2, everything that fails at run time exits 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The request itself cannot be served (bad subcommand arguments).
    #[error("{0}")]
    Usage(String),

    /// The config file parsed but its contents are inconsistent.
    #[error("config: {0}")]
    Config(String),

    /// A binary record file violates its format contract.
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] combtrack_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
