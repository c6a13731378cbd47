use thiserror::Error;

/// Errors raised across instance construction, estimation, planning and the harness.
#[derive(Debug, Error)]
pub enum CmdpError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error(
        "every candidate in the model class assigns zero likelihood to the data at step {step}"
    )]
    AllModelsImpossible { step: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("planned episode count N is required for the varying-weights bonus schedule")]
    MissingN,

    #[error("invalid transition kernel at step {step}, state {state}, action {action}: {reason}")]
    InvalidKernel {
        step: usize,
        state: usize,
        action: usize,
        reason: String,
    },

    #[error("degenerate decay fit: {0}")]
    DegenerateFit(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CmdpError>;
