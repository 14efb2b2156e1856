//! Crate-wide error type.
//!
//! Every fallible operation in the library returns [`Result`]. Variants are
//! deliberately fine-grained so callers (and tests) can match on the exact
//! failure instead of string-scraping messages.

use std::time::Duration;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("duplicate document id \"{id}\"")]
    DuplicateDocId { id: String },

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error("unsupported store schema version {found} (supported: {supported})")]
    SchemaVersion { found: u32, supported: u32 },

    #[error("poison constraint |P_i| = 1 violated: query \"{query_id}\" already has an injected text")]
    PoisonConstraint { query_id: String },

    #[error("invalid query \"{id}\": {reason}")]
    InvalidQuery { id: String, reason: String },

    #[error("cannot embed empty text")]
    EmptyText,

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("embedding contains a non-finite value at index {index}")]
    NonFiniteEmbedding { index: usize },

    #[error("zero-magnitude vector: {operation} is undefined")]
    ZeroVector { operation: &'static str },

    #[error("store holds no documents")]
    EmptyStore,

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("prompt template has no \"{slot}\" slot")]
    MissingSlot { slot: &'static str },

    #[error("keyword \"{keyword}\" is not an ablation target")]
    InvalidAblationKeyword { keyword: String },

    #[error("keyword \"{keyword}\" does not occur in its sub-text")]
    AblationKeywordAbsent { keyword: String },

    #[error("ablation applies only to template-shaped poisons, got {attack}")]
    AblationVariantMismatch { attack: String },

    #[error("provider \"{provider}\" failed: {message}{}", retry_hint(.retry_after))]
    Provider {
        provider: String,
        message: String,
        retryable: bool,
        retry_after: Option<Duration>,
    },

    #[error("provider \"{provider}\" returned an empty completion")]
    EmptyCompletion { provider: String },

    #[error("api key environment variable \"{env}\" is not set")]
    MissingApiKey { env: String },

    #[error("budget exhausted: {0}")]
    BudgetExhausted(String),

    #[error("cannot compute metrics over zero trial outcomes")]
    EmptyOutcomes,

    #[error("unknown report format \"{token}\" (supported: {supported})")]
    UnknownFormat { token: String, supported: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn retry_hint(retry_after: &Option<Duration>) -> String {
    match retry_after {
        Some(d) => format!(" (retry after {:.1}s)", d.as_secs_f64()),
        None => String::new(),
    }
}

impl Error {
    /// True when retrying the same call later could reasonably succeed.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Provider { retryable: true, .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn provider_error_carries_backoff_hint() {
        let err = Error::Provider {
            provider: "chat".into(),
            message: "429 Too Many Requests".into(),
            retryable: true,
            retry_after: Some(Duration::from_secs(2)),
        };
        assert!(err.is_retryable());
        let text = err.to_string();
        assert!(text.contains("429"));
        assert!(text.contains("retry after 2.0s"));
    }

    #[test]
    fn non_provider_errors_are_not_retryable() {
        assert!(!Error::EmptyStore.is_retryable());
        assert!(!Error::EmptyText.is_retryable());
    }
}
