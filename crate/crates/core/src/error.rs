use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown vertex {0}")]
    UnknownVertex(i64),

    #[error("unknown edge {0}")]
    UnknownEdge(usize),

    #[error("empty path")]
    EmptyPath,

    #[error("no edge {from}→{to}")]
    MissingEdge { from: i64, to: i64 },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("{}:{line}: {msg}", path.display())]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("no path from {from} to {to}")]
    NoPath { from: i64, to: i64 },

    #[error("no region route from region {from} to region {to}")]
    NoRegionRoute { from: usize, to: usize },

    #[error("cannot stitch region path inside region {region}")]
    Unstitchable { region: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "conjugate gradient did not converge on column {column} after {iterations} iterations \
         (relative residual {residual:.3e})"
    )]
    NotConverged {
        column: usize,
        iterations: usize,
        residual: f64,
    },

    #[error(
        "transfer system is singular: {unlabeled} region edges have no path to a labelled \
         region edge in the similarity graph; use mu2 > 0"
    )]
    SingularSystem { unlabeled: usize },

    #[error("model error: {0}")]
    Model(String),

    #[error("{}: {cause}", path.display())]
    Io { path: PathBuf, cause: std::io::Error },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, cause: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            cause,
        }
    }
}
