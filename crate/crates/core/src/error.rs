use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid {what}: {reason}")]
    Invalid { what: String, reason: String },

    #[error("parse error in field `{field}`: {reason}")]
    Parse { field: String, reason: String },

    #[error("no primitive of category `{0}` in the database")]
    Retrieval(String),

    #[error("viewpoint selection failed: {0}")]
    Selection(String),

    #[error("insufficient overlap: {0} jointly valid pixels (need at least 2)")]
    InsufficientOverlap(usize),

    #[error("degenerate scale-shift fit: {0}")]
    DegenerateFit(String),

    #[error("registration loss became non-finite at pyramid level {level}")]
    Optimization { level: usize },

    #[error("backend error: {message}")]
    Backend {
        message: String,
        transcript: Vec<String>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("pipeline aborted in stage {stage} at frame {frame}: {source}")]
    Pipeline {
        stage: u8,
        frame: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(what: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what: what.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn parse(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parse {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
