//! Crate-wide error type.

use crate::llm::BackendError;
use thiserror::Error;

/// Unified error for repository loading, planning, routing, execution, and
/// configuration. Backend transport/provider failures keep their own type
/// ([`BackendError`]) so callers can distinguish retryable transport errors
/// from provider refusals.
#[derive(Debug, Error)]
pub enum Error {
    #[error("repository error: {0}")]
    Repository(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("decomposition output unparseable after {retries} retries: {raw}")]
    UnparseableDecomposition { retries: u32, raw: String },

    #[error("invalid dependency declaration: {0}")]
    Dependency(String),

    #[error("planner output malformed after re-prompt: {0}")]
    MalformedPlan(String),

    #[error("no registered adapter supports {0}")]
    NoCapableAdapter(String),

    #[error("router model labels do not match the adapter registry: {0}")]
    LabelMismatch(String),

    #[error("router error: {0}")]
    Router(String),

    #[error("adapter {adapter}: {message}")]
    Adapter { adapter: String, message: String },

    #[error("execution error: {0}")]
    Execution(String),

    #[error("trace store error: {0}")]
    Trace(String),

    #[error("invalid value: {0}")]
    Invariant(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors that stem from bad configuration or missing inputs
    /// rather than runtime failures; the CLI maps these to exit code 2.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
