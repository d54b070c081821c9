use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    #[error("slicing failed: {0}")]
    Slicing(String),

    #[error("degenerate training set: {0}")]
    DegenerateTraining(String),

    #[error("ill-conditioned kernel matrix: {0}")]
    Conditioning(String),

    #[error("cluster {cluster} has {size} member(s); at least {required} required, try fewer clusters")]
    UnderPopulatedCluster {
        cluster: usize,
        size: usize,
        required: usize,
    },

    #[error("degenerate metric: {0}")]
    DegenerateMetric(String),

    #[error("sampling failed: {0}")]
    SamplingFailure(String),

    #[error("unsupported distribution: {0}")]
    UnsupportedDistribution(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("bundle error: {0}")]
    Bundle(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
