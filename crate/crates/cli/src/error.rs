use std::fmt;
use std::path::Path;

use propsplat_core::{Error, ModelFileError};

/// Failure classes, one exit code each.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage,
    Io,
    Data,
    Model,
    Numeric,
    Gradcheck,
}

impl Kind {
    pub fn exit_code(self) -> i32 {
        match self {
            Kind::Usage => 2,
            Kind::Io => 3,
            Kind::Data => 4,
            Kind::Model => 5,
            Kind::Numeric => 6,
            Kind::Gradcheck => 7,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Usage => "usage",
            Kind::Io => "io",
            Kind::Data => "data",
            Kind::Model => "model",
            Kind::Numeric => "numeric",
            Kind::Gradcheck => "gradcheck",
        }
    }
}

pub const EXIT_CODES_HELP: &str = "\
Exit codes:
  0  success
  2  usage: unknown flag, bad value, inconsistent options
  3  io: missing or unreadable input, unwritable output
  4  data: CSV schema or parse error, bad world file, empty or degenerate data
  5  model: corrupt model file, frequency mismatch, missing gateway model
  6  numeric: non-finite values during training
  7  gradcheck: analytic and numeric gradients disagree

Errors go to stderr as one tab-separated line:
  error<TAB>kind=<kind><TAB>message=<text>

Configuration precedence: command-line flags, then --config TOML file, then
built-in defaults.";

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    pub message: String,
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn new(kind: Kind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(Kind::Usage, message)
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self::new(Kind::Io, format!("{}: {err}", path.display()))
    }

    /// The single stderr line; tabs and newlines in the message are
    /// flattened so the line stays machine-parseable.
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!("error\tkind={}\tmessage={}", self.kind.name(), msg.trim())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

fn kind_of(e: &Error) -> Kind {
    match e {
        Error::InvalidArgument(_) => Kind::Usage,
        Error::Io { .. } => Kind::Io,
        Error::DegenerateSegment(_)
        | Error::EmptyDataset
        | Error::EmptyBatch
        | Error::Parse(_)
        | Error::MixedValueKind { .. }
        | Error::WorldSyntax { .. }
        | Error::DimensionMismatch { .. }
        | Error::LengthMismatch { .. }
        | Error::Csv(_) => Kind::Data,
        Error::InvalidQuery { source, .. } => kind_of(source),
        Error::FrequencyMismatch { .. } | Error::MissingGateway(_) | Error::ModelFile(_) => Kind::Model,
        Error::NonFiniteGradient(_) => Kind::Numeric,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = match &e {
            Error::Csv(c) if c.is_io_error() => Kind::Io,
            other => kind_of(other),
        };
        Self::new(kind, e.to_string())
    }
}

impl From<ModelFileError> for CliError {
    fn from(e: ModelFileError) -> Self {
        Self::new(Kind::Model, format!("model file: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_is_single_and_tab_separated() {
        let e = CliError::new(Kind::Data, "bad\tvalue\non line 3");
        assert_eq!(e.line(), "error\tkind=data\tmessage=bad value on line 3");
    }

    #[test]
    fn frequency_mismatch_is_model_kind() {
        let e: CliError = Error::FrequencyMismatch {
            model_hz: 9.15e8,
            query_hz: 1.8e9,
        }
        .into();
        assert_eq!(e.kind.exit_code(), 5);
        assert!(e.message.contains("915000000") && e.message.contains("1800000000"), "{}", e.message);
    }

    #[test]
    fn exit_codes_are_distinct() {
        let kinds = [Kind::Usage, Kind::Io, Kind::Data, Kind::Model, Kind::Numeric, Kind::Gradcheck];
        let mut codes: Vec<i32> = kinds.iter().map(|k| k.exit_code()).collect();
        codes.dedup();
        assert_eq!(codes.len(), kinds.len());
        assert!(!codes.contains(&0) && !codes.contains(&1));
    }
}
