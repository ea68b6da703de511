//! Chat-completion gateway.
//!
//! Every model call in the pipeline goes through [`Gateway::complete`]. The
//! gateway runs in one of two modes:
//!
//! * **replay**: responses come only from a [`ReplayCache`]; a prompt that was
//!   never recorded is an error, never a fabricated answer.
//! * **live**: cache hits are served first, misses go to a [`ChatModel`]
//!   backend with bounded exponential-backoff retry, and fresh responses are
//!   recorded into the cache when one is attached.
//!
//! Fingerprints cover the model name, temperature, output budget and the
//! byte-exact text of every message, so a run against a fixed cache is
//! reproducible byte for byte.

mod cache;
mod http;
mod types;

pub use cache::{CacheEntry, ReplayCache};
pub use http::HttpBackend;
pub use types::{ChatMessage, ChatRequest, ChatResponse, FinishReason, Fingerprint, Role, Usage};

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("unrecorded prompt: no replay entry for fingerprint {fingerprint}")]
    Unrecorded { fingerprint: Fingerprint },
    #[error("transient backend failure: {0}")]
    Transient(String),
    #[error("backend returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("malformed backend response: {0}")]
    Protocol(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("replay cache already holds a different response for {fingerprint}")]
    CacheConflict { fingerprint: Fingerprint },
    #[error("replay cache: {0}")]
    CacheFormat(String),
    #[error("gateway configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl GatewayError {
    pub fn is_transient(&self) -> bool {
        matches!(self, GatewayError::Transient(_))
    }
}

/// A chat-completion backend. Implementations must be shareable across the
/// detection worker threads.
pub trait ChatModel: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError>;
}

/// Closures work as backends, which keeps scripted test models short.
impl<F> ChatModel for F
where
    F: Fn(&ChatRequest) -> Result<ChatResponse, GatewayError> + Send + Sync,
{
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self(request)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 3, base_delay_ms: 500, max_delay_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay before attempt `n + 1`, given that attempt `n` (1-based) failed.
    pub fn delay_after(&self, n: u32) -> Duration {
        let factor = 1u64.checked_shl(n.saturating_sub(1)).unwrap_or(u64::MAX);
        Duration::from_millis(self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms))
    }
}

/// Model name and sampling settings shared by every request of one stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub model: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { model: "gpt-3.5-turbo-0125".into(), temperature: 0.0, max_output_tokens: 1024 }
    }
}

impl ModelSettings {
    pub fn request(&self, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest {
            model: self.model.clone(),
            messages,
            temperature: self.temperature,
            max_output_tokens: self.max_output_tokens,
        }
    }
}

/// Counting semaphore bounding concurrent backend calls.
struct InFlight {
    limit: usize,
    used: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        InFlight { limit: limit.max(1), used: Mutex::new(0), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut used = self.used.lock().unwrap();
        while *used >= self.limit {
            used = self.cv.wait(used).unwrap();
        }
        *used += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.used.lock().unwrap() -= 1;
        self.0.cv.notify_one();
    }
}

/// One entry of the gateway's call log.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub fingerprint: Fingerprint,
    pub request: ChatRequest,
    /// Served from the cache rather than the backend.
    pub cached: bool,
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

pub struct Gateway {
    backend: Option<Box<dyn ChatModel>>,
    cache: Option<Arc<ReplayCache>>,
    retry: RetryPolicy,
    in_flight: InFlight,
    sleep: Sleeper,
    log: Mutex<Vec<CallRecord>>,
}

impl Gateway {
    /// Replay-only gateway: every request must already be in `cache`.
    pub fn replay(cache: Arc<ReplayCache>) -> Self {
        Self::build(None, Some(cache))
    }

    /// Live gateway over `backend`, optionally caching through `cache`.
    pub fn live(backend: Box<dyn ChatModel>, cache: Option<Arc<ReplayCache>>) -> Self {
        Self::build(Some(backend), cache)
    }

    fn build(backend: Option<Box<dyn ChatModel>>, cache: Option<Arc<ReplayCache>>) -> Self {
        Gateway {
            backend,
            cache,
            retry: RetryPolicy::default(),
            in_flight: InFlight::new(4),
            sleep: Arc::new(std::thread::sleep),
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_in_flight_limit(mut self, limit: usize) -> Self {
        self.in_flight = InFlight::new(limit);
        self
    }

    /// Replaces the backoff sleep, e.g. with a no-op in tests.
    pub fn with_sleeper(mut self, sleep: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        self.sleep = Arc::new(sleep);
        self
    }

    pub fn in_flight_limit(&self) -> usize {
        self.in_flight.limit
    }

    pub fn cache(&self) -> Option<&Arc<ReplayCache>> {
        self.cache.as_ref()
    }

    /// Every `complete` call so far, in call order.
    pub fn call_log(&self) -> Vec<CallRecord> {
        self.log.lock().unwrap().clone()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        request.validate().map_err(GatewayError::InvalidRequest)?;
        let fingerprint = request.fingerprint();

        if let Some(hit) = self.cache.as_ref().and_then(|c| c.get(&fingerprint)) {
            self.log.lock().unwrap().push(CallRecord { fingerprint, request: request.clone(), cached: true });
            return Ok(hit);
        }
        self.log.lock().unwrap().push(CallRecord {
            fingerprint: fingerprint.clone(),
            request: request.clone(),
            cached: false,
        });

        let Some(backend) = &self.backend else {
            return Err(GatewayError::Unrecorded { fingerprint });
        };

        let response = {
            let _permit = self.in_flight.acquire();
            self.with_retries(|| backend.complete(request))?
        };
        if response.finish_reason != FinishReason::Error {
            if let Some(cache) = &self.cache {
                cache.record(request, &response, false)?;
            }
        }
        Ok(response)
    }

    /// Like [`Gateway::complete`], but a truncated answer is asked once more
    /// with twice the output budget. The second answer is returned as is,
    /// so callers still see `Truncated` if it was cut off again.
    pub fn complete_extending(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let first = self.complete(request)?;
        if first.finish_reason != FinishReason::Truncated {
            return Ok(first);
        }
        tracing::warn!(fingerprint = %request.fingerprint(), "truncated answer, retrying with a larger budget");
        let mut longer = request.clone();
        longer.max_output_tokens = longer.max_output_tokens.saturating_mul(2);
        self.complete(&longer)
    }

    fn with_retries(
        &self,
        mut call: impl FnMut() -> Result<ChatResponse, GatewayError>,
    ) -> Result<ChatResponse, GatewayError> {
        let max = self.retry.max_attempts.max(1);
        let mut attempt = 1;
        loop {
            match call() {
                Err(e) if e.is_transient() && attempt < max => {
                    let delay = self.retry.delay_after(attempt);
                    tracing::warn!(attempt, ?delay, error = %e, "transient gateway failure, retrying");
                    (self.sleep)(delay);
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
