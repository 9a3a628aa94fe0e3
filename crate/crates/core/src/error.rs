use thiserror::Error;

use crate::problem::ValidationReport;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KernelError {
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error("rank tolerance must be positive and finite, got {0}")]
    InvalidTolerance(f64),
    #[error("matrix has no columns")]
    EmptyDomain,
    #[error("singular value decomposition did not converge")]
    NoConvergence,
}

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("shape error in {field}: {detail}")]
    Shape { field: String, detail: String },
    #[error("problem failed validation: {0}")]
    Invalid(ValidationReport),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolveError {
    #[error("problem failed validation: {0}")]
    InvalidProblem(ValidationReport),
    #[error("infeasible at stage {stage}")]
    Infeasible { stage: usize },
    #[error("ill-posed at stage {stage}: {detail}")]
    IllPosed { stage: usize, detail: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error("problem failed validation: {0}")]
    InvalidProblem(ValidationReport),
    #[error("KKT system is inconsistent (constraint residual {residual:.3e})")]
    Infeasible { residual: f64 },
    #[error("KKT system is singular with a non-unique minimizer")]
    IllPosed,
}

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error("invalid disturbance config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solve(#[from] SolveError),
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed record: {0}")]
    Malformed(String),
}
