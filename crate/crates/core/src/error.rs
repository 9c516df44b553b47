use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the occlusion-field toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty geometry")]
    EmptyGeometry,

    #[error("empty scene")]
    EmptyScene,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("out of scene bounds")]
    OutOfBounds,

    #[error("unplaceable mesh after {attempts} attempts")]
    Unplaceable { attempts: usize },

    #[error("histogram too short: path time bin {bin} exceeds {n_bins} bins")]
    HistogramTooShort { bin: usize, n_bins: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("k = {k} out of range for {sensors} sensors")]
    KOutOfRange { k: usize, sensors: usize },

    #[error("training diverged at step {step} (non-finite loss); field restored to last finite state")]
    Diverged { step: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown mesh `{id}` (looked for {path})")]
    UnknownMesh { id: String, path: PathBuf },

    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures that stem from numerics rather than inputs or I/O.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Diverged { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
