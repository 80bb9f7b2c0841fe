use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("no face found in {0}")]
    NoFaceFound(PathBuf),

    #[error("unknown {kind} `{id}`; known: {}", known.join(", "))]
    UnknownBackend {
        kind: &'static str,
        id: String,
        known: Vec<String>,
    },

    #[error("backend `{backend}`: {message}")]
    Backend { backend: String, message: String },

    #[error("missing weights at {path}: {hint}")]
    MissingWeights { path: PathBuf, hint: String },

    #[error("manifest validation failed: {0}")]
    ManifestInvalid(String),

    #[error("missing preprocessing artifacts: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    MissingArtifacts(Vec<PathBuf>),

    #[error("training diverged at epoch {epoch}, batch {batch} (lr {lr}): loss = {loss}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        lr: f64,
        loss: f64,
    },

    #[error("model file: {0}")]
    ModelFormat(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable category used by the CLI error line.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Image { .. } => "image",
            Error::Parse { .. } => "parse",
            Error::InvalidInput(_) => "invalid-input",
            Error::ShapeMismatch { .. } => "shape",
            Error::NoFaceFound(_) => "no-face",
            Error::UnknownBackend { .. } => "registry",
            Error::Backend { .. } => "backend",
            Error::MissingWeights { .. } => "missing-weights",
            Error::ManifestInvalid(_) => "manifest",
            Error::MissingArtifacts(_) => "missing-artifacts",
            Error::NonFiniteLoss { .. } => "training",
            Error::ModelFormat(_) => "model-format",
        }
    }
}
