use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A loss or gradient evaluated to NaN or infinity.
    #[error("non-finite {what} at sample {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("bias probability {p} escapes [0, 1] at x = {x}, theta = {theta}")]
    ProbabilityOutOfRange { p: f64, x: f64, theta: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error(
        "inner solver stalled after {iterations} iterations (stationarity residual {residual:e})"
    )]
    SolverStall { iterations: usize, residual: f64 },

    #[error("inner solver hit {iterations} iterations without reaching tolerance (residual {residual:e})")]
    SolverMaxIterations { iterations: usize, residual: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("missing constant: {0}")]
    MissingConstant(&'static str),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
