use thiserror::Error;

/// Errors produced by any public operation in this crate.
#[derive(Debug, Error)]
pub enum EtidError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(
        "retrained-alike validity expired (worst Eq.-ratio {ratio:.4} < 1 for parts {i} vs {j}); \
         rebuild the ensemble from scratch"
    )]
    ValidityExpired { i: usize, j: usize, ratio: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EtidError>;

impl EtidError {
    pub fn shape(expected: impl Into<String>, got: impl Into<String>) -> Self {
        EtidError::Shape {
            expected: expected.into(),
            got: got.into(),
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        EtidError::Validation(msg.into())
    }
}
