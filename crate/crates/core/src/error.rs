use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate point set: {0}")]
    DegenerateSet(String),

    /// The reduced latent sample space is empty (too few local maxima).
    #[error("empty feasible sample space: {selected} selected points, need more than {n_min}")]
    EmptySpace { selected: usize, n_min: usize },

    #[error("point is not visible in any view")]
    InvalidPoint,

    #[error("combinatorial guard: {0}")]
    TooLarge(String),

    #[error("homography estimation failed: {0}")]
    EstimationFailed(String),

    #[error("sampling failed: {0}")]
    SamplingFailed(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    ImageFormat { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
