use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// Malformed input file or flag value.
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] longclust_core::Error),
    /// The fit stopped at the iteration cap; outputs were still written.
    #[error("no convergence after {iterations} iterations (last relative change {last_change:.3e})")]
    NotConverged { iterations: usize, last_change: f64 },
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(msg: impl Into<String>) -> Self {
        CliError::Format(msg.into())
    }

    /// Process exit status: 2 for input problems, 3 for numerical failures,
    /// 4 for non-convergence.
    pub fn exit_code(&self) -> u8 {
        use longclust_core::Error as E;
        match self {
            CliError::Io { .. } | CliError::Format(_) => 2,
            CliError::NotConverged { .. } => 4,
            CliError::Model(e) => match e {
                E::NotSymmetric
                | E::DegenerateCovariance
                | E::NumericalUnderflow { .. }
                | E::InstanceTooLarge { .. }
                | E::DegenerateCluster { .. }
                | E::CoincidentMeans { .. } => 3,
                _ => 2,
            },
        }
    }
}
