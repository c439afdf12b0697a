use thiserror::Error;

pub type Result<T, E = WadgError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum WadgError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("shape {shape:?} does not match data length {len}")]
    InvalidShape { shape: Vec<usize>, len: usize },

    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("backward requires a scalar node, got shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("unknown tape node {0}")]
    UnknownNode(usize),

    #[error("evaluation failed at coordinate {index}: {source}")]
    Coordinate {
        index: usize,
        #[source]
        source: Box<WadgError>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("unknown domain `{0}`")]
    UnknownDomain(String),

    #[error("dataset `{domain}`: {detail}")]
    Dataset { domain: String, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl WadgError {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        WadgError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether the error stems from bad user input or configuration rather
    /// than a runtime failure.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            WadgError::Config(_)
                | WadgError::UnknownDomain(_)
                | WadgError::Invalid(_)
                | WadgError::ShapeMismatch { .. }
                | WadgError::Dataset { .. }
        )
    }
}
