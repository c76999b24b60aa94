use thiserror::Error;

/// Errors produced by the library.
///
/// The CLI maps these onto exit codes: argument/precondition problems are
/// configuration errors, spectral/covariance degeneracies are numeric
/// failures, and `ResourceLimit` signals a request beyond the configured
/// degree caps.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The power spectrum vanishes on the window support, so coefficient
    /// variances are zero and normalization is undefined.
    #[error("degenerate spectrum: {0}")]
    DegenerateSpectrum(String),

    /// The statistic covariance matrix is numerically singular, so the
    /// standardization it is supposed to provide does not exist.
    #[error("singular statistic covariance: {0}")]
    SingularCovariance(String),

    /// Internal tables failed a consistency check (e.g. a window table
    /// that is no longer monotone).
    #[error("internal consistency: {0}")]
    Inconsistent(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn precondition(msg: impl Into<String>) -> Self {
        Error::Precondition(msg.into())
    }
}
