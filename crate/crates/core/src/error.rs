use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("matrix is not symmetric")]
    NotSymmetric,
    #[error("covariance matrix is not positive definite")]
    DegenerateCovariance,
    #[error("regressed transitions need covariates but none were supplied")]
    MissingCovariates,
    #[error("likelihood normalizer vanished at time index {t}")]
    NumericalUnderflow { t: usize },
    #[error("enumeration over {paths} assignment paths exceeds the oracle limit")]
    InstanceTooLarge { paths: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("cluster {cluster} has no expected responsibility")]
    DegenerateCluster { cluster: usize },
    #[error("labelings have different lengths ({left} vs {right})")]
    LengthMismatch { left: usize, right: usize },
    #[error("silhouette needs at least two clusters")]
    TooFewClusters,
    #[error("cluster means {h} and {k} coincide")]
    CoincidentMeans { h: usize, k: usize },
}
