use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: malformed JSON: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    /// A model-file array does not match its declared or expected shape.
    #[error("array `{name}`: {detail}")]
    Shape { name: String, detail: String },

    #[error("array `{name}` contains a non-finite value at flat index {index}")]
    NonFinite { name: String, index: usize },

    #[error("model invariant violated: {0}")]
    Invariant(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A point sits at or behind the camera plane.
    #[error("degenerate depth: point {index} has z = {z:e} m")]
    DegenerateDepth { index: usize, z: f64 },

    #[error("scale must be positive, got {0}")]
    NonPositiveScale(f64),

    #[error("directional light direction has near-zero norm ({0:e})")]
    DegenerateLight(f64),

    #[error("vertex {0} is only adjacent to zero-area faces")]
    DegenerateNormal(usize),

    #[error("image is {width}x{height}, smaller than the {window}x{window} SSIM window")]
    ImageTooSmall {
        width: usize,
        height: usize,
        window: usize,
    },

    #[error("energy term `{term}` is not finite ({value})")]
    NonFiniteEnergy { term: String, value: f64 },

    #[error("non-finite gradient entry at index {0}")]
    NonFiniteGradient(usize),

    #[error("unknown energy term `{0}`")]
    UnknownTerm(String),

    #[error("rank-deficient point configuration")]
    RankDeficient,

    #[error("config: {0}")]
    Config(String),

    #[error("image: {0}")]
    Image(String),

    #[error("fit aborted in {stage} after {restarts} restarts: {reason}")]
    FitAborted {
        stage: String,
        restarts: usize,
        reason: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(name: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            name: name.into(),
            detail: detail.into(),
        }
    }

    /// True for errors caused by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::DegenerateDepth { .. }
                | Error::NonFiniteEnergy { .. }
                | Error::NonFiniteGradient(_)
                | Error::FitAborted { .. }
                | Error::DegenerateLight(_)
                | Error::DegenerateNormal(_)
                | Error::RankDeficient
        )
    }
}
