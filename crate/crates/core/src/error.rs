//! Crate-wide error type.

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation precondition was violated by the caller.
    #[error("contract violation: {0}")]
    Contract(String),
    /// Input is structurally valid but degenerate for the operation.
    #[error("degenerate input: {0}")]
    Degenerate(String),
    /// Not enough samples to carry out a learning step.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Malformed or unsupported image data.
    #[error("image format: {0}")]
    ImageFormat(String),
    /// Malformed model or cost-volume file.
    #[error("file format: {0}")]
    FileFormat(String),
    /// Bad configuration or problem layout.
    #[error("config: {0}")]
    Config(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
