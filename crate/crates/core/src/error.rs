use thiserror::Error;

/// Errors raised anywhere in the tomography workbench.
#[derive(Debug, Error)]
pub enum PlatoError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("numeric error in {component}: {detail}")]
    Numeric { component: String, detail: String },

    #[error("degenerate embedding: row {row} of channel {channel} has zero norm")]
    DegenerateEmbedding { channel: usize, row: usize },

    #[error("unreachable pair ({src}, {dst})")]
    Unreachable { src: usize, dst: usize },

    #[error("rank-deficient system; use a ridge parameter > 0 ({0})")]
    RankDeficient(String),

    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, PlatoError>;

impl PlatoError {
    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl std::fmt::Display,
        actual: impl std::fmt::Display,
    ) -> Self {
        PlatoError::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn numeric(component: impl Into<String>, detail: impl Into<String>) -> Self {
        PlatoError::Numeric {
            component: component.into(),
            detail: detail.into(),
        }
    }
}
