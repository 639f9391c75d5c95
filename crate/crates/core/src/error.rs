use thiserror::Error;

/// Errors raised while building, validating or solving a recourse problem.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("causal graph contains a cycle through variable '{0}'")]
    Cycle(String),

    #[error("observational table sums to {sum}, expected 1 (tolerance 1e-9)")]
    Normalisation { sum: f64 },

    #[error("negative probability {value} at index {index}")]
    NegativeProbability { index: usize, value: f64 },

    #[error("classifier value {value} at index {index} lies outside [0, 1]")]
    ClassifierRange { index: usize, value: f64 },

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("factual has zero probability")]
    ZeroFactualProbability,

    #[error("intervention has no descendants; use point evaluation")]
    NoDescendants,

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("guard exceeded: {0}")]
    Guard(String),

    #[error("no actionable variables")]
    EmptyActionable,

    #[error("model file error: {0}")]
    Schema(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    /// True for errors caused by the caller's query rather than the model or solver.
    pub fn is_query_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_) | Error::ZeroFactualProbability | Error::NoDescendants | Error::EmptyActionable
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
