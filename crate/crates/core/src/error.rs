use thiserror::Error;

/// Errors raised by the library surface.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum LabError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value at index {index}")]
    NumericalOverflow { index: usize },

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("feature vector has zero norm")]
    DegenerateFeature,

    #[error("training diverged at step {step}")]
    TrainingDiverged { step: usize },

    #[error("cell `{cell}` (seed {seed}) diverged at step {step}")]
    CellDiverged { cell: String, seed: u64, step: usize },
}

impl LabError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
