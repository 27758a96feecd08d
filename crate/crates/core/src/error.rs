use std::path::PathBuf;

/// Errors surfaced by the library. CLI exit codes map `Io`/`Parse`/`Input`
/// to usage failures and everything else to runtime failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),

    #[error("simulation error: {0}")]
    Sim(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), message: message.into() }
    }

    pub fn input(message: impl Into<String>) -> Self {
        Error::Input(message.into())
    }
}
