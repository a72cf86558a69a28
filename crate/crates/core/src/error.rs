use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} (expected {expected}, got {got})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },
    #[error("matrix is not symmetric (max relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("matrix is not positive definite (last attempted jitter {jitter:e})")]
    NotPositiveDefinite { jitter: f64 },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("invalid dataset: {0}")]
    InvalidData(String),
    #[error("non-finite log posterior at initialization (term: {term})")]
    NonFiniteInitialization { term: &'static str },
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
    #[error("csv error in {path}: {reason}")]
    Csv { path: String, reason: String },
    #[error("missing column '{0}'")]
    MissingColumn(String),
    #[error("non-numeric cell in column '{column}' at row {row}: {value:?}")]
    NonNumericCell {
        column: String,
        row: usize,
        value: String,
    },
    #[error("missing values in rows {rows:?}")]
    MissingValues { rows: Vec<usize> },
    #[error("treatment column '{column}' has non-binary value {value:?} at row {row}")]
    NonBinaryTreatment {
        column: String,
        row: usize,
        value: String,
    },
    #[error("only one treatment arm present ({treated} treated of {n})")]
    SingleArm { treated: usize, n: usize },
    #[error("zero-variance covariate '{0}'")]
    ZeroVarianceCovariate(String),
    #[error("empty input file {0}")]
    EmptyFile(String),
    #[error("config error at line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("unknown scenario family '{given}'; legal families: {legal}")]
    UnknownFamily { given: String, legal: String },
    #[error("too many failed replications: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest error: {0}")]
    Manifest(String),
}

impl Error {
    /// Process exit code: 1 usage, 2 data, 3 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::NotSymmetric { .. }
            | Error::NonFiniteInitialization { .. }
            | Error::TooManyFailures { .. } => 3,
            Error::InvalidParameter { .. }
            | Error::Config { .. }
            | Error::UnknownFamily { .. }
            | Error::Manifest(_) => 1,
            _ => 2,
        }
    }

    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
