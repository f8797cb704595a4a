use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid network configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("incompatible language model: {0}")]
    IncompatibleModel(String),

    #[error("instance too large for exhaustive oracle ({0} candidates)")]
    TooLargeForOracle(u128),

    #[error("target sequence has no feasible alignment in {frames} frames")]
    InfeasibleTarget { frames: usize },

    #[error("corpus contains no usable characters")]
    EmptyCorpus,

    #[error("symbol {0:?} is not in the alphabet")]
    UnknownSymbol(char),

    #[error("no lexicon word admits a feasible alignment")]
    NoFeasibleWord,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end: 2 for bad input,
    /// 3 for I/O failures, 4 for incompatible or corrupt artifacts.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 3,
            Error::IncompatibleCheckpoint(_)
            | Error::CorruptCheckpoint(_)
            | Error::IncompatibleModel(_) => 4,
            _ => 2,
        }
    }
}
