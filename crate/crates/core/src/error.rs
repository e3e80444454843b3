use std::io;

use thiserror::Error;

/// Errors raised anywhere in the crate.
///
/// The variants map onto the CLI exit codes: usage problems are
/// [`Error::InvalidArgument`], file and data problems are the format/IO
/// variants, and [`Error::Numerical`] marks a numerical failure.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("format error in section `{section}`: {reason}")]
    Format { section: String, reason: String },

    #[error("variant mismatch: checkpoint holds `{found}`, expected `{expected}`")]
    VariantMismatch { expected: String, found: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("internal consistency violated: {0}")]
    InternalConsistency(String),

    #[error("non-finite value produced by `{op}`: {detail}")]
    Numerical { op: String, detail: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(section: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            section: section.into(),
            reason: reason.into(),
        }
    }

    /// Whether the error is a data/format problem rather than misuse.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::UnsupportedFormat(_)
                | Error::Format { .. }
                | Error::VariantMismatch { .. }
                | Error::DegenerateGeometry(_)
                | Error::Io(_)
        )
    }
}
