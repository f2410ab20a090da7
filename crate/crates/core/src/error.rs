use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the estimation pipeline can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid spline order {0}: order must be at least 1")]
    InvalidOrder(usize),

    #[error("invalid knots: {0}")]
    InvalidKnots(String),

    #[error("evaluation point {0} lies outside [0, 1]")]
    OutOfDomain(f64),

    #[error("derivative order {deriv} is not below the spline order {order}")]
    DerivativeOrder { deriv: usize, order: usize },

    #[error("penalty order {q} must satisfy 1 <= q < {order}")]
    InvalidPenaltyOrder { q: usize, order: usize },

    #[error("grid does not resolve basis function {index}: only {points} grid point(s) in its support")]
    InsufficientResolution { index: usize, points: usize },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("row count mismatch: {curves} curves but {responses} responses")]
    RowCountMismatch { curves: usize, responses: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate scale: residual scale estimate is zero")]
    DegenerateScale,

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("IRLS diverged: {0}")]
    Divergence(String),

    #[error("criterion undefined: effective degrees of freedom {edf:.6} too large for n = {n}")]
    OversmoothingGuard { edf: f64, n: usize },

    #[error("smoothing parameter selection failed: {0}")]
    SelectionFailure(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("simulation harness: {failed} of {total} replications failed (first failure: {first})")]
    Harness {
        failed: usize,
        total: usize,
        first: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Short machine-readable tag used in structured diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidOrder(_) => "invalid_order",
            Error::InvalidKnots(_) => "invalid_knots",
            Error::OutOfDomain(_) => "out_of_domain",
            Error::DerivativeOrder { .. } => "derivative_order",
            Error::InvalidPenaltyOrder { .. } => "invalid_penalty_order",
            Error::InsufficientResolution { .. } => "insufficient_resolution",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::Parse { .. } => "parse",
            Error::RowCountMismatch { .. } => "row_count_mismatch",
            Error::EmptyInput(_) => "empty_input",
            Error::DegenerateScale => "degenerate_scale",
            Error::SingularSystem(_) => "singular_system",
            Error::Divergence(_) => "divergence",
            Error::OversmoothingGuard { .. } => "oversmoothing_guard",
            Error::SelectionFailure(_) => "selection_failure",
            Error::Config(_) => "config",
            Error::Harness { .. } => "harness",
            Error::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}
