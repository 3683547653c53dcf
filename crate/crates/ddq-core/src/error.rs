use thiserror::Error;

/// Errors produced by the library. Validation failures carry enough context
/// to point at the offending input.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("scores are required for this operation but missing")]
    MissingScores,

    #[error("stage {stage} out of range: {budgets} budgets configured")]
    StageOutOfRange { stage: usize, budgets: usize },

    #[error("ground-truth list must be non-empty")]
    EmptyGroundTruth,

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scene generation failed: {0}")]
    SceneGeneration(String),
}

pub type Result<T> = std::result::Result<T, Error>;
