use std::path::PathBuf;

use crate::kg::Violation;

/// Errors produced anywhere in the alignment / refinement pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("no atomic units")]
    NoAtomicUnits,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("degenerate embedding (row {row} has zero norm)")]
    DegenerateEmbedding { row: usize },

    #[error("dimension/count mismatch: {0}")]
    CountMismatch(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("nonpositive marginal entry at index {index}")]
    NonPositiveMarginal { index: usize },

    #[error("numerical failure at iteration {iteration}")]
    NumericalFailure { iteration: usize },

    #[error("embedding provider unavailable: {0}")]
    ProviderUnavailable(String),

    #[error("llm client failure: {0}")]
    Llm(String),

    #[error("trace too short")]
    TraceTooShort,

    #[error("empty matrix")]
    EmptyMatrix,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid knowledge graph: {}", format_violations(.0))]
    InvalidGraph(Vec<Violation>),

    #[error("edge endpoint {0} has no coupling column")]
    UnmappedEndpoint(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("file not found: {}", .0.display())]
    FileNotFound(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

fn format_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    /// Process exit code for this error: 2 for bad inputs, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NumericalFailure { .. } | Error::NonFinite(_) => 3,
            Error::InvalidConfig(_) => 1,
            _ => 2,
        }
    }
}
