use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("region `{0}` has no occupied cells")]
    DegenerateRegion(String),

    #[error("value outside the valid domain: {0}")]
    Domain(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("linear system is singular: {0}")]
    Singular(String),

    #[error("unstable step at t = {time}: {detail}; try a smaller time step")]
    Stability { time: f64, detail: String },

    #[error("population field cannot be normalized: {0}")]
    Normalization(String),

    #[error("trajectory sequencing error: {0}")]
    Sequencing(String),

    #[error("data and trajectory are not aligned: {0}")]
    Alignment(String),

    #[error("invalid configuration `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unmatched regions: {0:?}")]
    UnmatchedRegions(Vec<String>),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category label, used by the CLI for exit codes and summaries.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::UnmatchedRegions(_) | Error::Parameter(_) => "config",
            Error::Parse { .. } | Error::Io { .. } => "io",
            Error::Dimension(_)
            | Error::Grid(_)
            | Error::DegenerateRegion(_)
            | Error::Alignment(_)
            | Error::Domain(_) => "input",
            Error::Singular(_) | Error::Stability { .. } | Error::Normalization(_) | Error::Sequencing(_) => {
                "numerical"
            }
        }
    }
}
