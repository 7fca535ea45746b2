//! Shared plumbing for the provider clients: secrets, retry policy and a
//! JSON POST helper.

use std::fmt;
use std::thread;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use tracing::{debug, warn};

/// Longest response-body excerpt carried in an error.
const EXCERPT_CHARS: usize = 200;

/// An API key or other credential. Never printed by `Debug` or `Display`.
#[derive(Clone, PartialEq, Eq)]
pub struct Secret(String);

impl Secret {
    pub fn new(value: impl Into<String>) -> Self {
        Self(value.into())
    }

    pub fn expose(&self) -> &str {
        &self.0
    }

    /// Replaces every occurrence of the secret in `text` with a placeholder.
    pub fn redact(&self, text: &str) -> String {
        if self.0.is_empty() {
            text.to_string()
        } else {
            text.replace(&self.0, "[REDACTED]")
        }
    }
}

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret([REDACTED])")
    }
}

/// Retry schedule for provider calls: up to `max_attempts` tries with the
/// delay doubling from `base_delay`, capped at `max_delay`. Only 429 and 5xx
/// responses are retried.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(250),
            max_delay: Duration::from_secs(8),
        }
    }
}

impl RetryPolicy {
    pub fn delay_for(&self, retry: u32) -> Duration {
        let factor = 1u32.checked_shl(retry).unwrap_or(u32::MAX);
        self.base_delay.saturating_mul(factor).min(self.max_delay)
    }
}

pub fn is_retryable(status: StatusCode) -> bool {
    status == StatusCode::TOO_MANY_REQUESTS || status.is_server_error()
}

/// Failure of a single logical provider call after retries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HttpFailure {
    Status { status: u16, excerpt: String },
    Timeout,
    Transport(String),
}

impl fmt::Display for HttpFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HttpFailure::Status { status, excerpt } => write!(f, "status {status}: {excerpt}"),
            HttpFailure::Timeout => f.write_str("request timed out"),
            HttpFailure::Transport(msg) => write!(f, "transport error: {msg}"),
        }
    }
}

pub(crate) fn excerpt(body: &str, key: &Secret) -> String {
    let redacted = key.redact(body);
    let mut out: String = redacted.chars().take(EXCERPT_CHARS).collect();
    if redacted.chars().count() > EXCERPT_CHARS {
        out.push('…');
    }
    out
}

/// Joins a base URL and a path segment without doubling the slash.
pub(crate) fn join_url(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path.trim_start_matches('/'))
}

/// POSTs `body` as JSON with a bearer token and returns the response text of
/// the first 2xx reply.
pub(crate) fn post_json(
    client: &Client,
    url: &str,
    key: &Secret,
    body: &serde_json::Value,
    timeout: Option<Duration>,
    policy: &RetryPolicy,
) -> Result<String, HttpFailure> {
    let attempts = policy.max_attempts.max(1);
    let mut last = HttpFailure::Transport("no attempt made".into());
    for attempt in 0..attempts {
        if attempt > 0 {
            let delay = policy.delay_for(attempt - 1);
            debug!(url, attempt, ?delay, "retrying provider request");
            thread::sleep(delay);
        }
        let mut req = client.post(url).bearer_auth(key.expose()).json(body);
        if let Some(t) = timeout {
            req = req.timeout(t);
        }
        let resp = match req.send() {
            Ok(r) => r,
            Err(e) if e.is_timeout() => return Err(HttpFailure::Timeout),
            Err(e) => {
                return Err(HttpFailure::Transport(key.redact(&e.without_url().to_string())));
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) if e.is_timeout() => return Err(HttpFailure::Timeout),
            Err(e) => return Err(HttpFailure::Transport(key.redact(&e.to_string()))),
        };
        if status.is_success() {
            return Ok(text);
        }
        last = HttpFailure::Status {
            status: status.as_u16(),
            excerpt: excerpt(&text, key),
        };
        if !is_retryable(status) {
            break;
        }
        warn!(url, status = status.as_u16(), attempt, "provider returned retryable status");
    }
    Err(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn secret_debug_is_redacted() {
        let s = Secret::new("sk-very-secret");
        assert_eq!(format!("{s:?}"), "Secret([REDACTED])");
        assert_eq!(s.redact("key=sk-very-secret!"), "key=[REDACTED]!");
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy {
            max_attempts: 3,
            base_delay: Duration::from_millis(100),
            max_delay: Duration::from_millis(300),
        };
        assert_eq!(p.delay_for(0), Duration::from_millis(100));
        assert_eq!(p.delay_for(1), Duration::from_millis(200));
        assert_eq!(p.delay_for(2), Duration::from_millis(300));
        assert_eq!(p.delay_for(40), Duration::from_millis(300));
    }

    #[test]
    fn retryable_statuses() {
        assert!(is_retryable(StatusCode::TOO_MANY_REQUESTS));
        assert!(is_retryable(StatusCode::BAD_GATEWAY));
        assert!(!is_retryable(StatusCode::BAD_REQUEST));
        assert!(!is_retryable(StatusCode::UNAUTHORIZED));
    }

    #[test]
    fn excerpt_truncates() {
        let long = "x".repeat(500);
        let e = excerpt(&long, &Secret::new("k"));
        assert_eq!(e.chars().count(), EXCERPT_CHARS + 1);
    }

    #[test]
    fn url_join() {
        assert_eq!(join_url("http://h/v1/", "/embeddings"), "http://h/v1/embeddings");
        assert_eq!(join_url("http://h/v1", "embeddings"), "http://h/v1/embeddings");
    }
}
