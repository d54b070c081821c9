use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] casgp::Error),

    #[error("{path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable identifier for scripts.
    pub fn kind(&self) -> &'static str {
        use casgp::Error as E;
        match self {
            CliError::Config { .. } => "config",
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                E::Argument(_) => "argument",
                E::Parse { .. } => "parse",
                E::Contract(_) => "contract",
                E::DegenerateSpectrum(_) => "degenerate-spectrum",
                E::Slicing(_) => "slicing",
                E::DegenerateTraining(_) => "degenerate-training",
                E::Conditioning(_) => "conditioning",
                E::UnderPopulatedCluster { .. } => "under-populated-cluster",
                E::DegenerateMetric(_) => "degenerate-metric",
                E::SamplingFailure(_) => "sampling-failure",
                E::UnsupportedDistribution(_) => "unsupported-distribution",
                E::Numerical(_) => "numerical",
                E::Bundle(_) => "bundle",
                E::Io { .. } => "io",
            },
        }
    }

    /// `error[kind]: message` on a single line.
    pub fn one_line(&self) -> String {
        one_line(self.kind(), &self.to_string())
    }
}

pub fn one_line(kind: &str, message: &str) -> String {
    let flat: Vec<&str> = message.split_whitespace().collect();
    format!("error[{kind}]: {}", flat.join(" "))
}
