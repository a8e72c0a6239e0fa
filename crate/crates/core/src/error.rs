//! Crate-wide error type. Variants are grouped by the exit-code class a
//! front end would map them to: configuration, data, or numeric failure.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor construction or an op received shapes it cannot combine.
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// An op received values outside its domain (log of a non-positive
    /// value, sqrt of a negative value, empty input where data is required).
    #[error("domain violation in {op}: {detail}")]
    DomainViolation { op: &'static str, detail: String },

    /// An op produced NaN or Inf from finite inputs. Surfaced immediately so
    /// non-finite values never propagate silently.
    #[error("non-finite value produced by {op}")]
    NonFinite { op: String },

    /// Invalid model, schedule, or training configuration.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Malformed dataset: bad manifest row, magic/version mismatch,
    /// inconsistent dimensions, missing file.
    #[error("data error: {0}")]
    Data(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::DomainViolation {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn non_finite(op: impl Into<String>) -> Self {
        Error::NonFinite { op: op.into() }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
