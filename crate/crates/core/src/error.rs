use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Internal,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Data => 3,
            ErrorKind::Internal => 4,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorKind::Config => "config",
            ErrorKind::Data => "data",
            ErrorKind::Internal => "internal",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("duplicate key: {0}")]
    DuplicateKey(String),
    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },
    #[error("fixation order error in {key}: {message}")]
    Order { key: String, message: String },
    #[error("empty scanpath: {0}")]
    EmptyScanpath(String),
    #[error("unknown stimulus {stimulus} referenced by {key}")]
    UnknownStimulus { key: String, stimulus: String },
    #[error("fixation {index} at ({x}, {y}) lies outside the {width}x{height} stimulus")]
    OutOfBounds {
        index: usize,
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
    #[error("bad patch size {size}: {message}")]
    BadPatchSize { size: usize, message: String },
    #[error("missing embedding file {0}")]
    MissingEmbedding(PathBuf),
    #[error("embedding header mismatch in {path}: file has {rows} rows, scanpath has {fixations} fixations")]
    HeaderMismatch {
        path: PathBuf,
        rows: usize,
        fixations: usize,
    },
    #[error("corrupt embedding file {path}: {message}")]
    CorruptFile { path: PathBuf, message: String },
    #[error("mixed embedding dimensions: {first} vs {second} ({key})")]
    MixedDim {
        first: usize,
        second: usize,
        key: String,
    },
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("cosine distance undefined for an all-zero vector")]
    ZeroVector,
    #[error("calibration needs at least two scanpaths, got {0}")]
    TooFewScanpaths(usize),
    #[error("subjects {0} and {1} share no stimulus")]
    NoSharedStimuli(String, String),
    #[error("bad matrix: {0}")]
    BadMatrix(String),
    #[error("degenerate clustering: {0}")]
    DegenerateClustering(String),
    #[error("only {available} candidates for {key}, need {needed}")]
    TooFewCandidates {
        key: String,
        available: usize,
        needed: usize,
    },
    #[error("degenerate marginals: expected agreement is 1")]
    DegenerateMarginals,
    #[error("alignment of {a} vs {b} failed: {source}")]
    Pair {
        a: String,
        b: String,
        #[source]
        source: Box<Error>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::BadPatchSize { .. } => ErrorKind::Config,
            Error::Internal(_) => ErrorKind::Internal,
            Error::Pair { source, .. } => source.kind(),
            _ => ErrorKind::Data,
        }
    }
}
