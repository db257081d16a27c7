use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("orbit parameter {lambda} outside sampled range [{min}, {max}]")]
    OutOfRange { lambda: f64, min: f64, max: f64 },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("undefined: {0}")]
    Undefined(String),
    #[error("missing forward cache: {0}")]
    MissingCache(String),
    #[error("non-finite loss {value} at epoch {epoch}, sample {sample}")]
    NonFiniteLoss {
        value: f64,
        epoch: usize,
        sample: usize,
    },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("missing sidecar {0}")]
    MissingSidecar(PathBuf),
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("geometry hash mismatch: file has {found}, expected {expected}")]
    GeometryMismatch { expected: String, found: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used by the command line front-end.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidGeometry(_) => "invalid_geometry",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::OutOfRange { .. } => "out_of_range",
            Error::Unsupported(_) => "unsupported",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Undefined(_) => "undefined",
            Error::MissingCache(_) => "missing_cache",
            Error::NonFiniteLoss { .. } => "non_finite_loss",
            Error::EmptyDataset => "empty_dataset",
            Error::MissingSidecar(_) => "missing_sidecar",
            Error::Format { .. } => "format",
            Error::GeometryMismatch { .. } => "geometry_mismatch",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_shape(expected: &[usize], actual: &[usize]) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch {
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        });
    }
    Ok(())
}
