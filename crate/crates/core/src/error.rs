//! Error types shared across the toolkit.

use thiserror::Error;

/// Unified error type for all pipeline operations.
#[derive(Debug, Error)]
pub enum FinevlError {
    /// Bad input data (unreadable image, malformed record, empty text, ...).
    #[error("input error: {0}")]
    Input(String),

    /// An API contract was violated by the caller (dimension mismatch,
    /// zero-norm vector, NaN score, wrong task kind, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// A model backend failed. Carries the backend role for context.
    #[error("backend error ({role}): {message}")]
    Backend { role: String, message: String },

    /// Configuration problems: unknown implementation ids, inconsistent
    /// toggles, missing paths.
    #[error("config error: {0}")]
    Config(String),

    /// Dataset parsing failures; lists the offending record ids.
    #[error("dataset error: {message} (offending: {})", offending.join(", "))]
    Dataset {
        message: String,
        offending: Vec<String>,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl FinevlError {
    pub fn input(msg: impl Into<String>) -> Self {
        FinevlError::Input(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        FinevlError::Contract(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        FinevlError::Config(msg.into())
    }

    pub fn backend(role: impl Into<String>, message: impl Into<String>) -> Self {
        FinevlError::Backend {
            role: role.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        FinevlError::Io {
            path: path.into(),
            source,
        }
    }

    /// Attach a sample id to an error bubbling out of per-sample scoring.
    pub fn for_sample(self, sample_id: &str) -> Self {
        match self {
            FinevlError::Backend { role, message } => FinevlError::Backend {
                role,
                message: format!("sample {sample_id}: {message}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, FinevlError>;
