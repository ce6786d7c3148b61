use thiserror::Error;

/// Errors raised across the toolkit.
///
/// The `Display` text of each numerical failure starts with a stable
/// snake_case token so that callers and logs can match on it.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension_mismatch: {0}")]
    Dimension(String),

    #[error("non_finite: {0}")]
    NonFinite(String),

    #[error("eigen_no_convergence: Schur iteration did not converge for a {size}x{size} matrix")]
    EigenNoConvergence { size: usize },

    #[error("lyapunov_unstable: spectral abscissa {abscissa:e} is not below -{margin:e}")]
    LyapunovUnstable { abscissa: f64, margin: f64 },

    #[error("lyapunov_residual: relative residual {residual:e} exceeds {tolerance:e}")]
    LyapunovResidual { residual: f64, tolerance: f64 },

    #[error("norm_unstable: spectral abscissa {abscissa:e}")]
    NormUnstable { abscissa: f64 },

    #[error("h2_undefined_feedthrough: feedthrough entry of magnitude {magnitude:e}")]
    H2UndefinedFeedthrough { magnitude: f64 },

    #[error("resolvent_singular: jw I - A is singular at w = {omega}")]
    ResolventSingular { omega: f64 },

    #[error("delta_loop_singular: condition number {condition:e}")]
    DeltaLoopSingular { condition: f64 },

    #[error("controller_loop_singular: condition number {condition:e}")]
    ControllerLoopSingular { condition: f64 },

    #[error("unknown_channel: {0}")]
    UnknownChannel(String),

    #[error("invalid_argument: {0}")]
    InvalidArgument(String),

    #[error("constraint_too_tight: acceptance rate {rate:e} after {rejected} rejections")]
    ConstraintTooTight { rate: f64, rejected: u64 },

    #[error("unstable_in_batch: infinite loss at sample indices {indices:?}")]
    UnstableInBatch { indices: Vec<usize> },

    #[error("missing_gradients: sample indices {indices:?} carry no gradient")]
    MissingGradients { indices: Vec<usize> },

    #[error("svd_failure: {0}")]
    Svd(String),

    #[error("format: field `{field}`: {message}")]
    Format { field: String, message: String },

    #[error("io: {0}")]
    Io(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format { field: field.into(), message: message.into() }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
