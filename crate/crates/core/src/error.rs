use thiserror::Error;

/// Errors raised anywhere in the toolkit.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("infeasible plan: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    InfeasiblePlan(Vec<crate::privacy::ConstraintCheck>),

    #[error("privacy budget exceeded at iteration {iteration}: spent {spent} > budget {budget}")]
    BudgetExceeded { iteration: usize, spent: f64, budget: f64 },

    #[error("step bound violated at iteration {iteration}: |step| = {step} > zeta/L = {bound}")]
    StepBound { iteration: usize, step: f64, bound: f64 },

    #[error("fixed-point range error: {0}")]
    Range(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidInput(msg.into()))
}
