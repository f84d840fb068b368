use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDimensions(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid match spec: {0}")]
    InvalidSpec(String),

    #[error("planning failed: {0}")]
    Planning(String),

    #[error("no stage layout found within search budget of {budget} candidates ({detail})")]
    SearchBudget { budget: u64, detail: String },

    #[error("stage count d={0} is outside the supported table range 2..=8")]
    UnsupportedStageCount(usize),

    #[error("plan mismatch: {0}")]
    PlanMismatch(String),

    #[error("invalid block layout: {0}")]
    InvalidLayout(String),

    #[error("malformed sketch file: {0}")]
    Format(String),

    #[error("sketch checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    Checksum { stored: u64, computed: u64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 2 for configuration problems, 3 for data integrity.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Format(_) | Error::Checksum { .. } => 3,
            _ => 2,
        }
    }
}
