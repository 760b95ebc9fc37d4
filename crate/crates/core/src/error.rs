use std::fmt;

use serde::Serialize;

use crate::ir::Span;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ErrorKind {
    Syntax,
    Type,
    Lowering,
    NonConvergence,
    NotSupported,
    InterchangeUnsafe,
    Checkpoint,
    CorruptCheckpoint,
    Runtime,
    CollectiveMismatch,
    Divergence,
    Io,
    UnknownVariable,
    Aborted,
    Internal,
}

impl ErrorKind {
    pub fn name(self) -> &'static str {
        match self {
            ErrorKind::Syntax => "SyntaxError",
            ErrorKind::Type => "TypeError",
            ErrorKind::Lowering => "LoweringError",
            ErrorKind::NonConvergence => "NonConvergence",
            ErrorKind::NotSupported => "NotSupported",
            ErrorKind::InterchangeUnsafe => "InterchangeUnsafe",
            ErrorKind::Checkpoint => "CheckpointError",
            ErrorKind::CorruptCheckpoint => "CorruptCheckpoint",
            ErrorKind::Runtime => "RuntimeError",
            ErrorKind::CollectiveMismatch => "CollectiveMismatch",
            ErrorKind::Divergence => "DivergenceDetected",
            ErrorKind::Io => "IoError",
            ErrorKind::UnknownVariable => "UnknownVariable",
            ErrorKind::Aborted => "Aborted",
            ErrorKind::Internal => "InternalError",
        }
    }
}

/// A located diagnostic. Every fallible operation in the crate returns
/// this type; `kind` decides how callers react (the CLI maps `Internal`
/// to exit code 2, everything else to 1).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Error {
    pub kind: ErrorKind,
    pub span: Option<Span>,
    pub message: String,
    /// For syntax errors: the token kinds that would have been accepted.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub expected: Vec<String>,
}

impl Error {
    pub fn new(kind: ErrorKind, span: Option<Span>, message: impl Into<String>) -> Self {
        Error { kind, span, message: message.into(), expected: Vec::new() }
    }

    pub fn at(kind: ErrorKind, span: Span, message: impl Into<String>) -> Self {
        Error::new(kind, Some(span), message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Error::new(ErrorKind::Internal, None, message)
    }

    pub fn io(message: impl Into<String>) -> Self {
        Error::new(ErrorKind::Io, None, message)
    }

    pub fn with_span(mut self, span: Span) -> Self {
        if self.span.is_none() {
            self.span = Some(span);
        }
        self
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(s) = self.span {
            write!(f, "{s}: ")?;
        }
        f.write_str(&self.message)
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
