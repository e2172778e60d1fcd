use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no data: {0}")]
    NoData(String),

    /// A division whose denominator is zero or negative, e.g. density at a
    /// standstill.
    #[error("degenerate division: {0}")]
    DivisionDegenerate(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("underdetermined fit: {samples} samples for {parameters} parameters")]
    Underdetermined { samples: usize, parameters: usize },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("unknown segment `{0}`")]
    UnknownSegment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Divergence { epoch: usize, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    /// Process exit code used by the command-line tool.
    ///
    /// 2 = configuration, 3 = data, 4 = divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Divergence { .. } => 4,
            Error::InvalidArgument(_)
            | Error::InvalidParams(_)
            | Error::Config(_)
            | Error::ShapeMismatch { .. }
            | Error::Json(_) => 2,
            Error::NoData(_)
            | Error::DivisionDegenerate(_)
            | Error::Underdetermined { .. }
            | Error::UnknownSegment(_)
            | Error::Data(_)
            | Error::Io(_)
            | Error::Csv(_) => 3,
        }
    }
}
