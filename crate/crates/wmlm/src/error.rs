//! Crate-wide error type with the exit-code categories used by the CLI.

use thiserror::Error;

/// Errors surfaced by any part of the pipeline.
///
/// Each variant maps to one CLI exit code (see [`Error::exit_code`]), so a
/// failure anywhere prints a single machine-parseable category line.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration: schema violation, out-of-range field,
    /// incompatible option combination.
    #[error("config: {0}")]
    Config(String),

    /// Dataset file problems: unreadable, wrong format tag, malformed record.
    #[error("data: {0}")]
    Data(String),

    /// Checkpoint container problems: bad manifest, shape mismatch against
    /// the model being restored, truncated payload.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Numeric aborts: NaN/Inf loss, divergence guards.
    #[error("numeric: {0}")]
    Numeric(String),

    /// Tensor shape mismatch; names both shapes and the operation.
    #[error("shape: {op} expects compatible shapes, got {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    /// Argument outside the mathematical domain of an operation.
    #[error("domain: {0}")]
    Domain(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for this error category.
    ///
    /// 2 = config, 3 = data, 4 = checkpoint, 5 = numeric, 1 = everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Data(_) => 3,
            Error::Checkpoint(_) => 4,
            Error::Numeric(_) => 5,
            Error::Shape { .. } | Error::Domain(_) => 2,
            Error::Io(_) => 1,
        }
    }

    /// Short category tag used in the CLI's one-line error output.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Checkpoint(_) => "checkpoint",
            Error::Numeric(_) => "numeric",
            Error::Shape { .. } => "shape",
            Error::Domain(_) => "domain",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_match_categories() {
        assert_eq!(Error::Config("x".into()).exit_code(), 2);
        assert_eq!(Error::Data("x".into()).exit_code(), 3);
        assert_eq!(Error::Checkpoint("x".into()).exit_code(), 4);
        assert_eq!(Error::Numeric("x".into()).exit_code(), 5);
    }

    #[test]
    fn shape_error_names_both_shapes() {
        let e = Error::Shape {
            op: "matmul",
            left: vec![2, 3],
            right: vec![4, 5],
        };
        let msg = e.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"));
    }
}
