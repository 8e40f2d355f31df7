use thiserror::Error;

/// Errors produced by the core algorithms.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("step {step} out of range 1..={total}")]
    StepOutOfRange { step: usize, total: usize },

    #[error("rejection sampler exceeded {cap} draws for tau = {tau}")]
    RejectionStall { tau: f64, cap: u64 },

    #[error("non-finite value at diffusion step {step}")]
    NumericalFailure { step: usize },

    #[error("training diverged at step {step}: loss {loss} vs initial {initial}")]
    TrainingDiverged { step: usize, loss: f64, initial: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::LengthMismatch { expected, actual })
    }
}
