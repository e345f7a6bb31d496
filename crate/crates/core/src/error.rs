use thiserror::Error;

/// Errors produced anywhere in the registration and fusion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,

    #[error("insufficient points: need at least {needed}, got {got}")]
    InsufficientPoints { needed: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no candidate points within the plane tolerance")]
    NoCandidates,

    #[error("contraction search fronts crossed without meeting the proximity constraint")]
    NoConvergence,

    #[error("no admissible model found")]
    NoModel,

    #[error("degenerate long axis: apex and base are {0:.3} mm apart")]
    DegenerateAxis(f64),

    #[error("degenerate cloud: covariance eigenvalue {0:e} is not positive")]
    DegenerateCloud(f64),

    #[error("count mismatch: {left} vs {right}")]
    CountMismatch { left: usize, right: usize },

    #[error("degenerate landmark configuration (covariance rank {0})")]
    DegenerateConfiguration(usize),

    #[error("singular linear system")]
    SingularSystem,

    #[error("unknown algorithm '{name}'; expected one of: {valid}")]
    UnknownAlgorithm { name: String, valid: String },

    #[error("zero-length vector")]
    ZeroVector,

    #[error("volume grids do not match")]
    GridMismatch,

    #[error("deformation field is empty")]
    EmptyField,

    #[error("transform is not invertible")]
    SingularTransform,

    #[error("invalid phantom spec: {0}")]
    InvalidSpec(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by the input data rather than by how the
    /// program was invoked.
    pub fn is_data_error(&self) -> bool {
        !matches!(
            self,
            Error::InvalidParameter(_) | Error::UnknownAlgorithm { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
