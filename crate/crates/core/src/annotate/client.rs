//! Foundation-model clients speaking a minimal JSON-over-HTTP contract:
//! request `{"prompt": ..., "image": <base64 PNG, optional>}`, response
//! `{"text": ...}`.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::labels::{Category, Color, Viewpoint};

/// Role a client plays in the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FmKind {
    Captioner,
    Paraphraser,
}

/// Ground-truth context available to offline mock clients. Never sent over
/// the wire.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameHint {
    pub category: Category,
    pub color: Option<Color>,
    pub viewpoint: Viewpoint,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FmRequest {
    pub prompt: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(skip)]
    pub hint: Option<FrameHint>,
}

#[derive(Clone, Debug, Deserialize)]
struct FmResponse {
    text: String,
}

/// Exhausted retries; keeps the last transport error for audit.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("{attempts} attempt(s) failed, last error: {last_error}")]
pub struct ClientError {
    pub attempts: usize,
    pub last_error: String,
}

pub trait FmClient: Send + Sync {
    fn kind(&self) -> FmKind;
    fn complete(&self, request: &FmRequest) -> Result<String, ClientError>;
}

/// Exponential backoff schedule between attempts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            base_delay_ms: 500,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    pub fn delay(&self, retry: usize) -> Duration {
        let factor = 1u64.checked_shl(retry.min(30) as u32).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }

    /// Runs `attempt` up to `max_retries + 1` times.
    pub fn run<F>(&self, mut attempt: F) -> Result<String, ClientError>
    where
        F: FnMut() -> Result<String, String>,
    {
        let mut last_error = String::new();
        for k in 0..=self.max_retries {
            if k > 0 {
                thread::sleep(self.delay(k - 1));
            }
            match attempt() {
                Ok(text) => return Ok(text),
                Err(e) => {
                    log::debug!("attempt {} failed: {e}", k + 1);
                    last_error = e;
                }
            }
        }
        Err(ClientError {
            attempts: self.max_retries + 1,
            last_error,
        })
    }
}

/// Client for a model server behind an HTTP endpoint.
#[derive(Clone, Debug)]
pub struct HttpClient {
    pub endpoint: String,
    pub timeout: Duration,
    pub retry: RetryPolicy,
    pub kind: FmKind,
    pub api_key: Option<String>,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, kind: FmKind) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(60),
            retry: RetryPolicy::default(),
            kind,
            api_key: None,
        }
    }

    /// Reads `<PREFIX>_ENDPOINT` and optionally `<PREFIX>_API_KEY`.
    pub fn from_env(prefix: &str, kind: FmKind) -> Option<Self> {
        let endpoint = std::env::var(format!("{prefix}_ENDPOINT")).ok()?;
        let mut c = Self::new(endpoint, kind);
        c.api_key = std::env::var(format!("{prefix}_API_KEY")).ok();
        Some(c)
    }

    fn post_once(&self, agent: &ureq::Agent, body: &str) -> Result<String, String> {
        let mut req = agent.post(&self.endpoint).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req.send_string(body).map_err(|e| e.to_string())?;
        let raw = resp.into_string().map_err(|e| format!("reading response: {e}"))?;
        let parsed: FmResponse = serde_json::from_str(&raw).map_err(|e| format!("bad response body: {e}"))?;
        Ok(parsed.text)
    }
}

impl FmClient for HttpClient {
    fn kind(&self) -> FmKind {
        self.kind
    }

    fn complete(&self, request: &FmRequest) -> Result<String, ClientError> {
        let body = serde_json::to_string(request).map_err(|e| ClientError {
            attempts: 0,
            last_error: e.to_string(),
        })?;
        let agent = ureq::AgentBuilder::new().timeout(self.timeout).build();
        self.retry.run(|| self.post_once(&agent, &body))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn backoff_doubles_and_caps() {
        let p = RetryPolicy { max_retries: 5, base_delay_ms: 100, max_delay_ms: 350 };
        assert_eq!(p.delay(0), Duration::from_millis(100));
        assert_eq!(p.delay(1), Duration::from_millis(200));
        assert_eq!(p.delay(2), Duration::from_millis(350));
    }

    #[test]
    fn retries_until_success() {
        let p = RetryPolicy { max_retries: 3, base_delay_ms: 0, max_delay_ms: 0 };
        let calls = Cell::new(0);
        let out = p.run(|| {
            calls.set(calls.get() + 1);
            if calls.get() < 3 { Err("busy".into()) } else { Ok("ok".into()) }
        });
        assert_eq!(out.unwrap(), "ok");
        assert_eq!(calls.get(), 3);
    }

    #[test]
    fn exhaustion_reports_attempts() {
        let p = RetryPolicy { max_retries: 2, base_delay_ms: 0, max_delay_ms: 0 };
        let err = p.run(|| Err("connection refused".into())).unwrap_err();
        assert_eq!(err.attempts, 3);
        assert_eq!(err.last_error, "connection refused");
    }

    #[test]
    fn hint_is_not_serialized() {
        let r = FmRequest {
            prompt: "p".into(),
            image: None,
            hint: Some(FrameHint { category: Category::Car, color: None, viewpoint: Viewpoint::Front }),
        };
        assert_eq!(serde_json::to_string(&r).unwrap(), r#"{"prompt":"p"}"#);
    }
}
