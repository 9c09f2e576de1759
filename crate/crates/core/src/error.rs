use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("too few points: need at least {needed}, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    #[error("degenerate plane fit: {0}")]
    DegenerateFit(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("point cloud has no normals")]
    MissingNormals,

    #[error("degenerate contact patch with {0} points")]
    DegeneratePatch(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True for errors caused by the input data rather than by usage or
    /// internal inconsistency.
    pub fn is_data_error(&self) -> bool {
        match self {
            Error::Stage { source, .. } => source.is_data_error(),
            Error::DegeneratePatch(_) | Error::Precondition(_) => false,
            _ => true,
        }
    }
}
