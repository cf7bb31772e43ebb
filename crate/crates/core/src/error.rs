use thiserror::Error;

/// Errors raised anywhere in the testing engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("value {value} outside [0, 1] for {what}")]
    OutOfUnitInterval { what: String, value: f64 },

    #[error("spline of order {0} is not supported here; order 3 is required")]
    UnsupportedOrder(usize),

    #[error("quadratic program is infeasible (phase-1 violation {violation:.3e})")]
    Infeasible { violation: f64 },

    #[error("quadratic program did not converge within {0} iterations")]
    MaxIterations(usize),

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("{discarded} of {total} bootstrap draws failed, above the 5% discard budget")]
    DiscardBudgetExceeded { discarded: usize, total: usize },

    #[error("input error at line {line}: {message}")]
    Input { line: usize, message: String },

    #[error("configuration error for key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Infeasible { .. }
                | Error::MaxIterations(_)
                | Error::NumericalBreakdown(_)
                | Error::DiscardBudgetExceeded { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
