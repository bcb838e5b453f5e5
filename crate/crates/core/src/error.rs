use std::path::PathBuf;

/// Errors produced by the scene, codec, diffusion and splatting routines.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("no frames")]
    NoFrames,

    #[error("unknown object id {0}")]
    UnknownObject(i32),

    #[error("empty depth")]
    EmptyDepth,

    #[error("degenerate alignment: {0}")]
    DegenerateAlignment(String),

    #[error("label out of palette: label {label} with {classes} classes")]
    LabelOutOfPalette { label: u32, classes: usize },

    #[error("no gaussians")]
    NoGaussians,

    #[error("degenerate camera: {0}")]
    DegenerateCamera(String),

    #[error("numerical abort at step {step}: {reason}")]
    NumericalAbort { step: usize, reason: String },

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for failures caused by the numerics (non-finite losses and the like)
    /// rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NumericalAbort { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
