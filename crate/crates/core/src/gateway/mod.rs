//! Chat-completion gateway.
//!
//! Every agent call goes through [`Gateway::complete`], which checks that the
//! requested model role is configured, bounds the number of in-flight
//! completions, and retries transient failures with capped exponential
//! backoff. Text is returned verbatim; label parsing lives in [`crate::model`].

mod http;
mod scripted;

use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{Endpoint, HttpBackend, API_KEY_ENV};
pub use scripted::{ScriptEntry, ScriptError, ScriptedBackend};

/// Which configured endpoint serves a request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelRole {
    /// The small target model.
    Base,
    /// The large agent model.
    Large,
}

impl fmt::Display for ModelRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Base => "base",
            Self::Large => "large",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub top_k: u32,
    pub max_tokens: u32,
}

impl Default for SamplingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            top_p: 0.9,
            top_k: 50,
            max_tokens: 4096,
        }
    }
}

impl SamplingParams {
    pub fn validate(&self) -> Result<(), GatewayError> {
        let ok = self.temperature.is_finite()
            && self.temperature >= 0.0
            && self.top_p > 0.0
            && self.top_p <= 1.0
            && self.top_k > 0
            && self.max_tokens > 0;
        if ok {
            Ok(())
        } else {
            Err(GatewayError::Config(format!("invalid sampling parameters: {self:?}")))
        }
    }
}

/// Identifies a call for replay: `agent:record_id` names the script entry and
/// `attempt` indexes into its response sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CallKey {
    pub agent: String,
    pub record_id: String,
    pub attempt: u32,
}

impl CallKey {
    pub fn new(agent: impl Into<String>, record_id: impl Into<String>, attempt: u32) -> Self {
        Self {
            agent: agent.into(),
            record_id: record_id.into(),
            attempt,
        }
    }

    pub fn script_key(&self) -> String {
        format!("{}:{}", self.agent, self.record_id)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_role: ModelRole,
    pub system: String,
    pub user: String,
    pub sampling: SamplingParams,
    pub key: CallKey,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub latency: Duration,
}

/// Failure reported by a single backend attempt.
#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error(transparent)]
    Script(#[from] ScriptError),
}

impl BackendError {
    fn is_transient(&self) -> bool {
        match self {
            Self::Transport(_) => true,
            Self::Provider { status, .. } => *status == 429 || *status >= 500,
            Self::Script(_) => false,
        }
    }
}

#[derive(Debug, Clone, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("provider returned status {status}: {body}")]
    Provider { status: u16, body: String },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Script(#[from] ScriptError),
}

/// Anything that can serve a chat completion. Implementations must tolerate
/// concurrent calls.
pub trait ChatBackend: Send + Sync {
    fn has_role(&self, role: ModelRole) -> bool;
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    #[serde(with = "millis")]
    pub initial_delay: Duration,
    #[serde(with = "millis")]
    pub max_delay: Duration,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 4,
            initial_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(16),
            multiplier: 2.0,
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self {
            max_retries: 0,
            ..Self::default()
        }
    }

    /// Delay before retry number `retry` (0-based).
    pub fn delay(&self, retry: u32) -> Duration {
        let scaled = self.initial_delay.as_secs_f64() * self.multiplier.powi(retry as i32);
        Duration::from_secs_f64(scaled.min(self.max_delay.as_secs_f64()))
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

/// Counting semaphore that also records the high-water mark.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    state: Mutex<(usize, usize)>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            state: Mutex::new((0, 0)),
            freed: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut state = self.state.lock().unwrap();
        while state.0 >= self.limit {
            state = self.freed.wait(state).unwrap();
        }
        state.0 += 1;
        state.1 = state.1.max(state.0);
        Permit(self)
    }

    fn peak(&self) -> usize {
        self.state.lock().unwrap().1
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut state = self.0.state.lock().unwrap();
        state.0 -= 1;
        self.0.freed.notify_one();
    }
}

pub struct Gateway {
    backend: Box<dyn ChatBackend>,
    retry: RetryPolicy,
    in_flight: InFlight,
}

impl Gateway {
    pub fn new(backend: impl ChatBackend + 'static) -> Self {
        Self {
            backend: Box::new(backend),
            retry: RetryPolicy::default(),
            in_flight: InFlight::new(usize::MAX),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// At most `limit` completions are outstanding at any instant.
    pub fn with_max_concurrency(mut self, limit: usize) -> Self {
        self.in_flight = InFlight::new(limit);
        self
    }

    /// Highest number of simultaneously outstanding completions observed.
    pub fn peak_in_flight(&self) -> usize {
        self.in_flight.peak()
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        if !self.backend.has_role(request.model_role) {
            return Err(GatewayError::Config(format!(
                "no endpoint configured for role {}",
                request.model_role
            )));
        }
        let mut retry = 0;
        loop {
            let outcome = {
                let _permit = self.in_flight.acquire();
                self.backend.send(request)
            };
            match outcome {
                Ok(resp) => return Ok(resp),
                Err(e) if e.is_transient() && retry < self.retry.max_retries => {
                    let wait = self.retry.delay(retry);
                    log::warn!("{} failed ({e}); retrying in {wait:?}", request.key.script_key());
                    std::thread::sleep(wait);
                    retry += 1;
                }
                Err(BackendError::Transport(message)) => {
                    return Err(GatewayError::Transport {
                        attempts: retry + 1,
                        message,
                    })
                }
                Err(BackendError::Provider { status, body }) => return Err(GatewayError::Provider { status, body }),
                Err(BackendError::Script(e)) => return Err(GatewayError::Script(e)),
            }
        }
    }
}
