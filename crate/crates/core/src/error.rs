use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("regression map is not contracting: Lipschitz constant {0} >= 1")]
    NonContractive(f64),
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("kernel scale must be positive, got {0}")]
    InvalidScale(f64),
    #[error("bandwidth must be positive, got {0}")]
    InvalidBandwidth(f64),
    #[error("centering atom set is empty")]
    EmptyAtoms,
    #[error("truncation half-width must be positive, got {0}")]
    InvalidC(f64),
    #[error("sample too small: need at least {needed}, got {got}")]
    SampleTooSmall { needed: usize, got: usize },
    #[error("bootstrap replicate vector is empty")]
    EmptyReplicates,
    #[error("refinement matrix has no eigenvalue within tolerance of 1 (residual {0:e})")]
    EigenFailure(f64),
    #[error("unsupported wavelet family: {0}")]
    UnsupportedFamily(String),
    #[error("quadrature grid of {0} points exceeds the memory budget")]
    QuadratureOverflow(usize),
    #[error("simulated path too short: need at least {needed}, got {got}")]
    PathTooShort { needed: usize, got: usize },
    #[error("covariance matrix not positive semidefinite (min eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("no decay rate could be fitted to the tau profile")]
    NoFit,
    #[error("empty input sample")]
    EmptyInput,
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("replication {index}: {source}")]
    Replication {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user configuration rather than numerics.
    pub fn is_config_error(&self) -> bool {
        match self {
            Error::Replication { source, .. } => source.is_config_error(),
            Error::EigenFailure(_)
            | Error::QuadratureOverflow(_)
            | Error::NotPsd(_)
            | Error::NoFit
            | Error::Io(_) => false,
            _ => true,
        }
    }
}
