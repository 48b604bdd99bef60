use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand extents do not fit the operation.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("parameter `{0}` has no gradient")]
    MissingGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// A malformed annotation record, identified by its id.
    #[error("annotation record {id}: {reason}")]
    Annotation { id: String, reason: String },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn shape_err<T>(op: &'static str, detail: impl Into<String>) -> Result<T> {
    Err(Error::Shape {
        op,
        detail: detail.into(),
    })
}
