//! Error surface shared by every module in this crate.

use thiserror::Error;

/// Stage of the suspension construction that raised a failure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Normalize,
    Transport,
    Density,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Stage::Normalize => write!(f, "normalize"),
            Stage::Transport => write!(f, "transport"),
            Stage::Density => write!(f, "density"),
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("invalid point: coordinate {index} is not finite")]
    InvalidPoint { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("resource budget exceeded: {requested} grid points > budget {budget}")]
    ResourceBudget { requested: u128, budget: u128 },

    #[error("invalid map: {0}")]
    InvalidMap(String),

    #[error("unsupported isotopy: {0}")]
    UnsupportedIsotopy(String),

    #[error("invalid field: {0}")]
    InvalidField(String),

    /// Normalization applied where the time component is not strictly positive.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    /// The orbit failed to cross the section within the winding guard.
    #[error("no return: orbit did not cross the section within duration {guard}")]
    NoReturn { guard: f64 },

    #[error("integration blow-up: non-finite state after {steps} steps")]
    BlowUp { steps: u64 },

    #[error("inversion failure: {0}")]
    InversionFailure(String),

    /// A hypothesis of the construction failed at a labelled stage.
    #[error("construction failure at {stage} stage: {message}")]
    ConstructionFailure { stage: Stage, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;
