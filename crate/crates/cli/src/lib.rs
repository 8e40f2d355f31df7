//! Experiment harness: dataset generation, training, evaluation under the
//! method variants, ablations, oracle checks and frame dumps.

pub mod checks;
pub mod commands;
pub mod config;
pub mod experiment;
pub mod pgm;

pub use config::{ExperimentConfig, RolloutMode, Split};
pub use experiment::{EpisodeRow, ExperimentReport, VariantSummary, Variant};

/// Harness failures, grouped by the exit code they map to.
#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("missing input {path}: run `{hint}` first")]
    MissingInput { path: String, hint: &'static str },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] actscale_core::Error),
    #[error("report: {0}")]
    Report(String),
    #[error("{failed} of {total} checks failed")]
    ChecksFailed { failed: usize, total: usize },
}

impl HarnessError {
    /// Process exit code: 2 config, 3 io or file format, 4 numerical or
    /// training failure, 5 failed checks.
    pub fn exit_code(&self) -> i32 {
        use actscale_core::Error as E;
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::MissingInput { .. } | HarnessError::Io(_) | HarnessError::Report(_) => 3,
            HarnessError::Core(e) => match e {
                E::Io(_) | E::Corrupt(_) | E::Version { .. } | E::ShapeMismatch(_) => 3,
                E::NumericalFailure { .. } | E::TrainingDiverged { .. } | E::RejectionStall { .. } => 4,
                E::InvalidInput(_) | E::LengthMismatch { .. } | E::StepOutOfRange { .. } => 2,
            },
            HarnessError::ChecksFailed { .. } => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
