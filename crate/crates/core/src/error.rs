use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid layer configuration: {0}")]
    Layer(String),

    #[error("invalid unit spec: {0}")]
    Unit(String),

    #[error("invalid network config at stage {stage}: {message}")]
    Config { stage: usize, message: String },

    #[error("unknown network `{0}`")]
    UnknownNetwork(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("label {label} out of range for {classes} classes (sample {index})")]
    Label { index: usize, label: usize, classes: usize },

    #[error("non-finite value produced by node `{node}`")]
    NonFinite { node: String },

    #[error("{0}")]
    Input(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
