use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the odometry pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in `{op}`: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("near-zero quaternion (norm {0:e})")]
    DegenerateQuaternion(f64),

    #[error("no evaluable segments")]
    NoEvaluableSegments,

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("frame {id} rejected: {reason}")]
    FrameRejected { id: u64, reason: String },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error("out-of-order window index: got {got}, expected {expected}")]
    OutOfOrder { got: u64, expected: u64 },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Reads and deserializes a TOML file, reporting the failing line.
pub(crate) fn read_toml<T: serde::de::DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_owned(),
        line: e.span().map_or(0, |s| text[..s.start].lines().count().max(1)),
        msg: e.message().to_owned(),
    })
}
