use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate segment: transmitter and receiver coincide at {0}")]
    DegenerateSegment(crate::geometry::Point3),

    #[error("frequency mismatch: model serves {model_hz} Hz but query uses {query_hz} Hz")]
    FrequencyMismatch { model_hz: f64, query_hz: f64 },

    #[error("invalid query at index {index}: {source}")]
    InvalidQuery {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("non-finite gradient in parameter group `{0}`")]
    NonFiniteGradient(&'static str),

    #[error("{}", format_parse_errors(.0))]
    Parse(Vec<ParseIssue>),

    #[error("mixed value kinds in one file: {first} and {second} (line {line})")]
    MixedValueKind {
        first: crate::io::ValueKind,
        second: crate::io::ValueKind,
        line: u64,
    },

    #[error("model file: {0}")]
    ModelFile(#[from] ModelFileError),

    #[error("world file line {line}: {message}")]
    WorldSyntax { line: usize, message: String },

    #[error("missing model for gateway `{0}`")]
    MissingGateway(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// One rejected field or row from a measurement file.
#[derive(Debug, Clone, PartialEq)]
pub struct ParseIssue {
    pub line: u64,
    pub column: Option<String>,
    pub message: String,
}

impl std::fmt::Display for ParseIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match &self.column {
            Some(col) => write!(f, "line {}, column `{}`: {}", self.line, col, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

fn format_parse_errors(issues: &[ParseIssue]) -> String {
    let mut out = format!("{} parse error(s)", issues.len());
    for issue in issues.iter().take(10) {
        out.push_str("; ");
        out.push_str(&issue.to_string());
    }
    if issues.len() > 10 {
        out.push_str("; ...");
    }
    out
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelFileError {
    #[error("bad magic bytes (not a model file)")]
    BadMagic,
    #[error("unsupported version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("file truncated: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed content: {0}")]
    Malformed(String),
}
