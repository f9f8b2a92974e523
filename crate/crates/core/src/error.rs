use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{file}:{line}: field `{field}`: {reason}")]
    Row {
        file: String,
        line: u64,
        field: String,
        reason: String,
    },

    #[error("duplicate visit for patient {patient} on day {day}")]
    DuplicateVisit { patient: String, day: i64 },

    #[error("patient {0} has visits but no outcome row")]
    MissingOutcome(String),

    #[error("patient {0} has an outcome row but no visits")]
    MissingVisits(String),

    #[error("invalid synthetic cohort specification: {0}")]
    InvalidSpec(String),

    #[error("invalid workflow: {0}")]
    InvalidWorkflow(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("label matrix carries no signal: every labeling function abstains on every pair")]
    NoSignal,

    #[error("training labels contain a single class ({0}); both T and S are required")]
    SingleClass(&'static str),

    #[error("subscores are missing for patient {0}")]
    MissingSubscores(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
