use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("rotation angle is at pi; the logarithm branch is ambiguous")]
    AmbiguousBranch,

    #[error("point is behind the camera (z = {0})")]
    BehindCamera(f64),

    #[error("invalid camera: {0}")]
    InvalidCamera(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("unknown variable {0}")]
    UnknownVariable(u64),

    #[error("normal equations are singular; the graph has unconstrained gauge freedom")]
    GaugeFreedom,

    #[error("information matrix is singular")]
    SingularInformation,

    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    #[error("seed ring is empty: no keyframe lies within the first ring")]
    EmptySeedRing,

    #[error("no image at timestamp {0}")]
    UnknownTimestamp(f64),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("ring {ring}, stage {stage}: {source}")]
    Pipeline {
        ring: usize,
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, ring: usize, stage: &'static str) -> Self {
        Error::Pipeline {
            ring,
            stage,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
