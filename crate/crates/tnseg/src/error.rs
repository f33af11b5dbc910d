//! Crate-wide error type.

/// Errors surfaced by the segmentation library.
///
/// Variants mirror the failure classes of the public API: shape mismatches,
/// bad configuration, rejected inputs, invalid runtime state, and wrapped
/// backend / IO failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("rejected input: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("value error: {0}")]
    Value(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training aborted: {0}")]
    Training(String),
    #[error(transparent)]
    Backend(#[from] candle_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Self::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Self::Config(msg.into())
    }
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }
    pub fn state(msg: impl Into<String>) -> Self {
        Self::State(msg.into())
    }
    pub fn value(msg: impl Into<String>) -> Self {
        Self::Value(msg.into())
    }
    pub fn data(msg: impl Into<String>) -> Self {
        Self::Data(msg.into())
    }
}
