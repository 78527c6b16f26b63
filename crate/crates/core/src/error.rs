use thiserror::Error;

/// Errors produced by the basis, fitting, solver and reference routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("parameter {value} outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("invalid knot vector: {0}")]
    InvalidKnots(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{solver} solver cannot handle this model: {reason}")]
    WrongSolver {
        solver: &'static str,
        reason: String,
    },

    #[error("singular linear system ({context}), condition estimate {condition:.3e}")]
    Singular { context: String, condition: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;
