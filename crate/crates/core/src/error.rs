//! Crate-wide error type and result alias.

use std::fmt;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, CoreError>;

/// Errors emitted by the grounding engine.
#[derive(Debug)]
pub enum CoreError {
    /// Two operands have incompatible shapes.
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: String,
    },
    /// A configuration value violates a module invariant. `field` names the
    /// offending key so callers can report it verbatim.
    InvalidConfig { field: String, message: String },
    /// Input frames do not match the backbone's patch grid or frame count.
    BadInput { message: String },
    /// A fixture weight file is truncated, has a bad magic, or carries
    /// inconsistent dimensions.
    CorruptFixture { path: String, message: String },
    /// Media (frame image or frame directory) could not be read or decoded.
    Media { path: String, message: String },
    /// An annotation line failed to parse. Line numbers are 1-based.
    AnnotationParse { line: usize, message: String },
    /// Evaluation inputs are unusable (empty set, unmatched sample ids).
    Eval { message: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: shape mismatch, expected {expected}, got {got}"),
            CoreError::InvalidConfig { field, message } => {
                write!(f, "invalid config field `{field}`: {message}")
            }
            CoreError::BadInput { message } => write!(f, "rejected input: {message}"),
            CoreError::CorruptFixture { path, message } => {
                write!(f, "corrupt fixture `{path}`: {message}")
            }
            CoreError::Media { path, message } => write!(f, "cannot read media `{path}`: {message}"),
            CoreError::AnnotationParse { line, message } => {
                write!(f, "annotation parse error at line {line}: {message}")
            }
            CoreError::Eval { message } => write!(f, "evaluation error: {message}"),
            CoreError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CoreError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            CoreError::Io(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for CoreError {
    fn from(e: std::io::Error) -> Self {
        CoreError::Io(e)
    }
}
