//! Shared plumbing for OpenAI-compatible HTTP providers: auth, retry with
//! backoff, and a minimal request rate limiter.
//!
//! Retry policy: 429 and 5xx responses are retryable; a `Retry-After` header
//! (integer seconds form) overrides the exponential backoff for that wait.
//! Any other non-success status is surfaced immediately as a non-retryable
//! provider error. When retries run out the last classification is returned
//! so callers still see the backoff hint.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Connection settings for one OpenAI-compatible endpoint. The API key is
/// read from the process environment, never from the config file itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RemoteProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    /// Minimum spacing between requests in milliseconds; 0 disables pacing.
    #[serde(default)]
    pub min_interval_ms: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

fn default_max_retries() -> u32 {
    3
}

#[derive(Debug, PartialEq)]
pub(crate) enum StatusClass {
    Ok,
    Retryable,
    Fatal,
}

pub(crate) fn classify_status(status: u16) -> StatusClass {
    match status {
        200..=299 => StatusClass::Ok,
        429 => StatusClass::Retryable,
        500..=599 => StatusClass::Retryable,
        _ => StatusClass::Fatal,
    }
}

/// Parses the integer-seconds form of a `Retry-After` header. The HTTP-date
/// form is rare on LLM APIs and is ignored.
pub(crate) fn parse_retry_after(value: &str) -> Option<Duration> {
    value.trim().parse::<u64>().ok().map(Duration::from_secs)
}

/// Spaces calls at least `min_interval` apart. Shared by reference between
/// retries of one provider.
pub(crate) struct RateLimiter {
    min_interval: Duration,
    last: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub(crate) fn new(min_interval: Duration) -> Self {
        RateLimiter {
            min_interval,
            last: Mutex::new(None),
        }
    }

    pub(crate) fn wait(&self) {
        if self.min_interval.is_zero() {
            return;
        }
        let mut last = self.last.lock().expect("rate limiter lock");
        if let Some(prev) = *last {
            let elapsed = prev.elapsed();
            if elapsed < self.min_interval {
                std::thread::sleep(self.min_interval - elapsed);
            }
        }
        *last = Some(Instant::now());
    }
}

pub(crate) struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: String,
    name: String,
    max_retries: u32,
    limiter: RateLimiter,
}

impl HttpProvider {
    pub(crate) fn new(name: impl Into<String>, config: &RemoteProviderConfig) -> Result<Self> {
        let api_key =
            std::env::var(&config.api_key_env).map_err(|_| Error::MissingApiKey {
                env: config.api_key_env.clone(),
            })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| Error::Provider {
                provider: config.model.clone(),
                message: format!("failed to build http client: {e}"),
                retryable: false,
                retry_after: None,
            })?;
        Ok(HttpProvider {
            client,
            endpoint: config.endpoint.clone(),
            api_key,
            name: name.into(),
            max_retries: config.max_retries,
            limiter: RateLimiter::new(Duration::from_millis(config.min_interval_ms)),
        })
    }

    fn provider_error(&self, message: String, retryable: bool, retry_after: Option<Duration>) -> Error {
        Error::Provider {
            provider: self.name.clone(),
            message,
            retryable,
            retry_after,
        }
    }

    /// POSTs `body` as JSON and decodes the JSON response, retrying on 429
    /// and 5xx with exponential backoff capped by `max_retries`.
    pub(crate) fn post_json<B: Serialize, T: DeserializeOwned>(&self, body: &B) -> Result<T> {
        let mut attempt = 0u32;
        loop {
            self.limiter.wait();
            let sent = self
                .client
                .post(&self.endpoint)
                .bearer_auth(&self.api_key)
                .json(body)
                .send();
            let response = match sent {
                Ok(r) => r,
                Err(e) => {
                    let err = self.provider_error(format!("transport error: {e}"), true, None);
                    if attempt < self.max_retries {
                        std::thread::sleep(backoff(attempt));
                        attempt += 1;
                        continue;
                    }
                    return Err(err);
                }
            };
            let status = response.status().as_u16();
            match classify_status(status) {
                StatusClass::Ok => {
                    return response
                        .json::<T>()
                        .map_err(|e| self.provider_error(format!("bad response body: {e}"), false, None));
                }
                StatusClass::Retryable => {
                    let retry_after = response
                        .headers()
                        .get("retry-after")
                        .and_then(|v| v.to_str().ok())
                        .and_then(parse_retry_after);
                    let err = self.provider_error(
                        format!("http status {status}"),
                        true,
                        retry_after,
                    );
                    if attempt < self.max_retries {
                        std::thread::sleep(retry_after.unwrap_or_else(|| backoff(attempt)));
                        attempt += 1;
                        continue;
                    }
                    return Err(err);
                }
                StatusClass::Fatal => {
                    let snippet: String = response.text().unwrap_or_default().chars().take(200).collect();
                    return Err(self.provider_error(
                        format!("http status {status}: {snippet}"),
                        false,
                        None,
                    ));
                }
            }
        }
    }
}

fn backoff(attempt: u32) -> Duration {
    Duration::from_millis(250u64.saturating_mul(1 << attempt.min(6)))
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_classification() {
        assert_eq!(classify_status(200), StatusClass::Ok);
        assert_eq!(classify_status(201), StatusClass::Ok);
        assert_eq!(classify_status(429), StatusClass::Retryable);
        assert_eq!(classify_status(500), StatusClass::Retryable);
        assert_eq!(classify_status(503), StatusClass::Retryable);
        assert_eq!(classify_status(400), StatusClass::Fatal);
        assert_eq!(classify_status(401), StatusClass::Fatal);
        assert_eq!(classify_status(404), StatusClass::Fatal);
    }

    #[test]
    fn retry_after_parses_integer_seconds_only() {
        assert_eq!(parse_retry_after("2"), Some(Duration::from_secs(2)));
        assert_eq!(parse_retry_after(" 10 "), Some(Duration::from_secs(10)));
        assert_eq!(parse_retry_after("Wed, 21 Oct 2015 07:28:00 GMT"), None);
        assert_eq!(parse_retry_after(""), None);
    }

    #[test]
    fn missing_api_key_env_is_reported_by_name() {
        let config = RemoteProviderConfig {
            endpoint: "http://localhost:1/v1".into(),
            model: "m".into(),
            api_key_env: "CORRUPTRAG_TEST_NO_SUCH_KEY".into(),
            timeout_secs: 1,
            max_retries: 0,
            min_interval_ms: 0,
        };
        let err = HttpProvider::new("embedding", &config).err().unwrap();
        assert!(matches!(
            err,
            Error::MissingApiKey { env } if env == "CORRUPTRAG_TEST_NO_SUCH_KEY"
        ));
    }

    #[test]
    fn backoff_grows_and_caps() {
        assert!(backoff(0) < backoff(1));
        assert_eq!(backoff(6), backoff(20));
    }
}
