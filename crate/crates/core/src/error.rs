use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("constraint violation for query {query_id}: {message}")]
    Constraint { query_id: String, message: String },

    #[error("missing translation for doc {doc_id} in language {language}")]
    MissingTranslation { doc_id: u8, language: String },

    /// A call to an external adapter failed and may succeed if retried.
    #[error("transport error{}: {message}", doc_id.map(|d| format!(" (doc {d})")).unwrap_or_default())]
    Transport { doc_id: Option<u8>, message: String },

    #[error("invalid adapter output: {0}")]
    InvalidOutput(String),

    #[error("value {value} outside [{lo}, {hi}]")]
    Range { value: f64, lo: f64, hi: f64 },

    #[error("backend {model_id} lacks capability {capability}")]
    Capability { model_id: String, capability: &'static str },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{missing} not found; run {stage}")]
    MissingStage { missing: String, stage: &'static str },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn transport(message: impl Into<String>) -> Self {
        Error::Transport { doc_id: None, message: message.into() }
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Error::Domain(message.into())
    }

    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport { .. })
    }
}

/// Runs `op` up to `1 + retries` times, retrying only transport errors.
pub(crate) fn with_retries<T>(retries: usize, mut op: impl FnMut() -> Result<T>) -> Result<T> {
    let mut attempt = 0;
    loop {
        match op() {
            Err(e) if e.is_retryable() && attempt < retries => {
                log::debug!("retrying after transport error: {e}");
                attempt += 1;
            }
            other => return other,
        }
    }
}
