use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Which half of the dual-branch layer an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Local,
    Global,
}

impl std::fmt::Display for Branch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Branch::Local => f.write_str("local"),
            Branch::Global => f.write_str("global"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("sequence length {len} is not divisible by window length {window}")]
    Divisibility { len: usize, window: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{branch} branch: {source}")]
    Branch {
        branch: Branch,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("check failed: {0}")]
    Check(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_branch(self, branch: Branch) -> Self {
        Error::Branch {
            branch,
            source: Box::new(self),
        }
    }

    /// Process exit code for the error category. Branch errors report the
    /// category of the underlying failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 2,
            Error::Shape(_) => 3,
            Error::Divisibility { .. } | Error::Config(_) => 4,
            Error::Parse(_) => 5,
            Error::Io { .. } => 6,
            Error::Check(_) => 7,
            Error::Branch { source, .. } => source.exit_code(),
        }
    }
}
