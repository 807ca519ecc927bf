use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no data found: {0}")]
    NoData(String),

    #[error("failed to decode {path}: {message}")]
    Decode { path: PathBuf, message: String },

    #[error("stratification error: {0}")]
    Stratification(String),

    #[error("invalid transform: {0}")]
    InvalidTransform(String),

    #[error("contour error: {0}")]
    Contour(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("degenerate shape: {0}")]
    DegenerateShape(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    TrainingDiverged(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable short name of the variant, used for machine-parsable CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::NoData(_) => "NoData",
            Error::Decode { .. } => "DecodeError",
            Error::Stratification(_) => "StratificationError",
            Error::InvalidTransform(_) => "InvalidTransform",
            Error::Contour(_) => "ContourError",
            Error::Config(_) => "ConfigError",
            Error::DegenerateShape(_) => "DegenerateShape",
            Error::Precondition(_) => "PreconditionError",
            Error::Shape(_) => "ShapeError",
            Error::Checkpoint(_) => "CheckpointError",
            Error::TrainingDiverged(_) => "TrainingDiverged",
            Error::Label(_) => "LabelError",
            Error::Format(_) => "FormatError",
            Error::Io(_) => "IoError",
            Error::Csv(_) => "CsvError",
            Error::Json(_) => "JsonError",
        }
    }

    /// Process exit code for this error; every variant maps to a distinct value.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NoData(_) => 10,
            Error::Decode { .. } => 11,
            Error::Stratification(_) => 12,
            Error::InvalidTransform(_) => 13,
            Error::Contour(_) => 14,
            Error::Config(_) => 15,
            Error::DegenerateShape(_) => 16,
            Error::Precondition(_) => 17,
            Error::Shape(_) => 18,
            Error::Checkpoint(_) => 19,
            Error::TrainingDiverged(_) => 20,
            Error::Label(_) => 21,
            Error::Format(_) => 22,
            Error::Io(_) => 23,
            Error::Csv(_) => 24,
            Error::Json(_) => 25,
        }
    }
}
