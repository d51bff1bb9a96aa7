use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("point behind camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("no hand pose detected in any frame")]
    EmptyPose,

    #[error("tip detector found no reserved-color pixels in any frame")]
    DetectorFailure,

    #[error("transport error after {attempts} attempt(s) to {endpoint}: {message}")]
    Transport {
        endpoint: String,
        attempts: u32,
        status: Option<u16>,
        message: String,
    },

    #[error("remote rejected request to {endpoint} ({status}): {message}")]
    Remote {
        endpoint: String,
        status: u16,
        message: String,
    },

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error at {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error at {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("clip {clip}: {source}")]
    Clip {
        clip: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json { path: path.into(), source }
    }

    /// Attach a clip id to an error raised while processing that clip.
    pub fn in_clip(self, clip: impl Into<String>) -> Self {
        match self {
            e @ Error::Clip { .. } => e,
            e => Error::Clip { clip: clip.into(), source: Box::new(e) },
        }
    }

    /// The innermost error, looking through clip context.
    pub fn root(&self) -> &Error {
        match self {
            Error::Clip { source, .. } => source.root(),
            e => e,
        }
    }
}
