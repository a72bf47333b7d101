use std::path::PathBuf;

use crate::tensor::OpKind;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite value produced by {0:?}")]
    NonFinite(OpKind),

    #[error("tensors from different tapes combined in {0:?}")]
    TapeMismatch(OpKind),

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("backward root is not attached to a tape")]
    DetachedRoot,

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("zero pivot at row {0} of tridiagonal solve")]
    ZeroPivot(usize),

    #[error("all-zero geometry mask")]
    EmptyMask,

    #[error("latent PDE became unstable: max |w| grew from {before:.3e} to {after:.3e}")]
    Unstable { before: f64, after: f64 },

    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged { epoch: usize, reason: String },

    #[error("file format error in {path}: {detail}")]
    Format { path: PathBuf, detail: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(detail: impl Into<String>) -> Self {
        Error::Invalid(detail.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
