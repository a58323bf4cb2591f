use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported/corrupt image {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error("not a trimap: pixel ({x}, {y}) has value {value}, farther than 8 levels from 0/128/255")]
    NotATrimap { x: usize, y: usize, value: u8 },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("degenerate alpha: matte is constant {0}, no boundary exists")]
    DegenerateAlpha(f32),

    #[error("empty unknown region")]
    EmptyUnknown,

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("weights do not match the architecture manifest: {0}")]
    Manifest(String),

    #[error("checksum mismatch for tensor `{0}`")]
    Checksum(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("non-finite loss at step {step} in component `{component}`")]
    NonFinite { step: u64, component: &'static str },

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
