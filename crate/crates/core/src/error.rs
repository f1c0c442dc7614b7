use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no reports")]
    NoReports,

    #[error("empty table")]
    EmptyTable,

    #[error("empty table after filtering")]
    EmptyAfterFiltering,

    #[error("structural zero with observation at ({drug}, {ae})")]
    StructuralZero { drug: String, ae: String },

    #[error("likelihood overflow at cell ({row}, {col})")]
    LikelihoodOverflow { row: usize, col: usize },

    #[error("objective evaluated to NaN")]
    NanObjective,

    #[error("quantile bracket failure")]
    QuantileBracket,

    #[error("degenerate group: no events ({group})")]
    DegenerateGroup { group: String },

    #[error("group {group}: {source}")]
    Group {
        group: String,
        #[source]
        source: Box<Error>,
    },

    /// A group fit that failed inside a larger run, kept as its message.
    #[error("group {group} failed: {message}")]
    GroupFailed { group: String, message: String },
    #[error("nothing to permute")]
    NothingToPermute,

    #[error("{failed} of {total} permutation replicates failed")]
    ReplicateFailures { failed: usize, total: usize },

    #[error("no overlap")]
    NoOverlap,

    #[error("degenerate labels")]
    DegenerateLabels,

    #[error("zero variance")]
    ZeroVariance,

    #[error("empty validation side")]
    EmptyValidation,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unknown AE {0} in ontology lookup")]
    UnmappedAe(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// Coarse classification used for process exit codes.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::InvalidArgument(_) => ErrorKind::Config,
            Error::LikelihoodOverflow { .. }
            | Error::NanObjective
            | Error::QuantileBracket
            | Error::ReplicateFailures { .. }
            | Error::ZeroVariance
            | Error::GroupFailed { .. } => ErrorKind::Numerical,
            Error::Group { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numerical,
}
