use thiserror::Error;

/// Errors produced by the filtering toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Two inputs that must agree in size or shape do not.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// An argument is outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A probability vector has a negative entry, a non-finite entry, or
    /// does not sum to one.
    #[error("invalid marginal: {0}")]
    InvalidMarginal(String),

    /// The two marginals of a transport problem carry different total mass.
    #[error("infeasible transport problem: marginal totals differ by {difference:e}")]
    InfeasibleMarginals { difference: f64 },

    /// Every particle was assigned zero likelihood, so weights cannot be
    /// normalised.
    #[error("degenerate likelihood: all particle weights vanished")]
    DegenerateLikelihood,

    /// A model trajectory left the representable range.
    #[error("non-finite state encountered during model integration")]
    NonFiniteState,

    /// A filter run diverged at the given assimilation step.
    #[error("numerical blowup at assimilation step {step}")]
    NumericalBlowup { step: usize },

    /// The transport solver failed to terminate within its pivot budget.
    #[error("transport solver exceeded {limit} pivots")]
    PivotLimit { limit: u64 },

    /// An experiment configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
