use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("cannot read {path}: {reason}")]
    Ingest { path: PathBuf, reason: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("synthetic generation failed: {0}")]
    Generation(String),

    #[error("sampling saturated for exam {exam_id}: no valid window after {attempts} attempts")]
    Saturation { exam_id: String, attempts: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("transfer failed on layer {layer}: {reason}")]
    Transfer { layer: String, reason: String },

    #[error("checkpoint error at byte offset {offset}: {reason}")]
    Checkpoint { offset: u64, reason: String },

    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    Training { epoch: usize, batch: usize, reason: String },

    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("leak audit failed: {0}")]
    Audit(String),

    #[error("malformed CSV at line {line}: {reason}")]
    CsvRow { line: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Training { .. } => 4,
            Error::Audit(_) => 5,
            Error::Stage { source, .. } => match source.exit_code() {
                2 | 3 | 5 => source.exit_code(),
                _ => 4,
            },
            _ => 3,
        }
    }
}
