use thiserror::Error;

/// Errors raised by the lab. Constraint violations that are part of a normal
/// answer (e.g. a basis row summing to 0.9) are reported in validation
/// reports instead.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LlsError {
    #[error("structural mismatch: {0}")]
    Structure(String),

    #[error("latent point coordinates sum to {sum}, expected 1")]
    OffHyperplane { sum: f64 },

    #[error("latent point has {got} coordinates, model has K = {expected}")]
    Dimension { expected: usize, got: usize },

    #[error("item {item} is beyond the horizon {horizon} and the model has no generator")]
    OutOfRange { item: usize, horizon: usize },

    #[error("category {category} out of range 1..={count} at item {item}")]
    Category {
        item: usize,
        category: usize,
        count: usize,
    },

    #[error("latent point is outside Q: item {item}, category {category} has probability {value}")]
    OutsideQ {
        item: usize,
        category: usize,
        value: f64,
    },

    #[error("invalid mixing measure: {0}")]
    Mixing(String),

    #[error("outcome sequence has zero evidence under every atom")]
    ZeroEvidence,

    #[error("enumeration of {size} outcomes exceeds the budget {budget}")]
    EnumerationBudget { size: u128, budget: u128 },

    #[error("value {value} outside the domain [0, 1]")]
    Domain { value: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error(
        "basis vectors are linearly dependent over the tabulated horizon (rank {rank} < K = {k})"
    )]
    Dependent { rank: usize, k: usize },

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for LlsError {
    fn from(e: std::io::Error) -> Self {
        LlsError::Io(e.to_string())
    }
}

impl From<csv::Error> for LlsError {
    fn from(e: csv::Error) -> Self {
        LlsError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LlsError>;
