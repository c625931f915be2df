use thiserror::Error;

use crate::model::Violation;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {}", join(.0))]
    InvalidModel(Vec<Violation>),

    #[error("{0}")]
    TimeOutOfRange(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("observation has zero likelihood under the belief and joint action")]
    ZeroLikelihood,

    #[error("observation sequence has zero probability under the statistic")]
    ZeroMarginal,

    #[error("decision rule undefined for agent {agent} at t={time} on history {history:?}")]
    UndefinedDecision { time: usize, agent: usize, history: Vec<usize> },

    #[error("prediction rule undefined for agent {agent} on history {history:?}")]
    UndefinedPrediction { agent: usize, history: Vec<usize> },

    #[error("alpha set must contain at least one vector")]
    EmptyGamma,

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("policy structure: {0}")]
    Structure(String),

    #[error("budget exceeded: {what} needs {needed}, limit is {limit}")]
    BudgetExceeded { what: &'static str, needed: f64, limit: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Parse(#[from] crate::io::ParseError),

    #[error("policy document: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

pub type Result<T> = std::result::Result<T, Error>;
