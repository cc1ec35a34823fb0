use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed scan {path}: {reason}")]
    MalformedScan { path: PathBuf, reason: String },
    #[error("malformed pose at line {line}: {reason}")]
    MalformedPose { line: usize, reason: String },
    #[error("invalid scan sequence: {0}")]
    InvalidSequence(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated file: {0}")]
    TruncatedFile(String),
    #[error("dimension error: {0}")]
    DimensionError(String),
    #[error("malformed CSV: {0}")]
    MalformedCsv(String),
    #[error("descriptor set has no class labels")]
    Unlabeled,
    #[error("empty descriptor set")]
    EmptySet,
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("sample {index} is the only member of class {class}")]
    DegenerateClass { index: usize, class: usize },
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("generalized eigensolver failed: {0}")]
    SolverFailure(String),
    #[error("empty precision/recall curve")]
    EmptyCurve,
    #[error("empty {0} list")]
    EmptyList(&'static str),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
