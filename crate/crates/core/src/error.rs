use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid kernel size {0}: kernel sizes must be odd and at least 3")]
    InvalidKernel(usize),

    #[error("class id {label} out of range for {num_classes} classes")]
    ClassOutOfRange { label: usize, num_classes: usize },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("malformed grid file: {0}")]
    Format(String),

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("training diverged at iteration {iter}: {detail}")]
    Divergence { iter: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
