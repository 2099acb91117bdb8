use thiserror::Error;

/// Errors produced by the knapsack solvers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("infeasible set: linear constraint cannot be met inside the box")]
    InfeasibleSet,

    #[error("infeasible point: component {index} = {value} outside [{lower}, {upper}]")]
    InfeasiblePoint {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("linear constraint vector is identically zero")]
    ZeroConstraint,

    #[error("wrong right-hand side kind: expected {0}")]
    WrongRhs(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("linear constraint violated at start of step: slack {slack}")]
    ConstraintViolated { slack: f64 },

    #[error("line search failed after {evaluations} evaluations (best step {best_alpha})")]
    LineSearch {
        best_alpha: f64,
        best_value: f64,
        evaluations: usize,
    },

    #[error("line search precondition violated: directional derivative {0} is not negative")]
    NotDescent(f64),

    #[error("objective evaluation returned a non-finite value at iteration {iteration}")]
    Evaluator { iteration: usize, x: Vec<f64> },

    #[error("conjugate gradient did not converge: relative residual {final_residual} after {iterations} iterations")]
    Pcg {
        iterations: usize,
        final_residual: f64,
        history: Vec<f64>,
    },

    #[error("cycle limit {0} reached")]
    CycleLimit(usize),

    #[error("i/o error: {0}")]
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

pub type Result<T> = std::result::Result<T, Error>;
