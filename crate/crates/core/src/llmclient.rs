//! Provider-agnostic client for multimodal completion requests: one text
//! prompt plus an optional page image per request, with rate limiting,
//! retries with exponential backoff, token accounting, and record/replay
//! cassettes for offline runs.

pub mod cassette;
pub mod mock;
pub mod wire;

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::PageImage;

pub use cassette::{request_key, Cassette, CassetteEntry, CassetteProvider, CassetteRecorder};
pub use mock::{MockTransport, RecordedRequest};
pub use wire::HttpTransport;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("credential environment variable {env_var} is not set")]
    MissingCredential { env_var: String },
    #[error("authentication failed: {message}")]
    Auth { message: String },
    #[error("rate limited by provider: {message}")]
    RateLimited { message: String },
    #[error("provider server error (status {status}): {message}")]
    Server { status: u16, message: String },
    #[error("request timed out: {message}")]
    Timeout { message: String },
    #[error("network failure: {message}")]
    Network { message: String },
    #[error("malformed provider response: {message}")]
    MalformedResponse { message: String },
    #[error("provider refused the request: {message}")]
    Refusal { message: String },
    #[error("invalid request: {message}")]
    Validation { message: String },
    #[error("retries exhausted after {attempts} attempts")]
    RetriesExhausted {
        attempts: u32,
        #[source]
        source: Box<ClientError>,
    },
    #[error("cassette miss for key {key}")]
    CassetteMiss { key: String },
    #[error("cassette file {path}: {message}")]
    CassetteFile { path: String, message: String },
}

impl ClientError {
    /// Transient failures are worth retrying; authentication, validation,
    /// refusals, and malformed responses are not.
    pub fn is_transient(&self) -> bool {
        matches!(
            self,
            ClientError::RateLimited { .. }
                | ClientError::Server { .. }
                | ClientError::Timeout { .. }
                | ClientError::Network { .. }
        )
    }
}

/// One completion request. Pipeline-issued requests always carry
/// temperature 0.0.
#[derive(Debug, Clone)]
pub struct ModelRequest {
    pub model_id: String,
    pub prompt: String,
    pub image: Option<PageImage>,
    pub temperature: f64,
    pub max_output_tokens: Option<u64>,
}

impl ModelRequest {
    pub fn new(model_id: impl Into<String>, prompt: impl Into<String>) -> Self {
        ModelRequest {
            model_id: model_id.into(),
            prompt: prompt.into(),
            image: None,
            temperature: 0.0,
            max_output_tokens: None,
        }
    }

    pub fn with_image(mut self, image: PageImage) -> Self {
        self.image = Some(image);
        self
    }

    pub fn image_bytes(&self) -> Option<&[u8]> {
        self.image.as_ref().map(|i| i.image_bytes.as_slice())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelResponse {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub elapsed_seconds: f64,
    pub attempt_count: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Gemini,
    Openai,
}

/// Static description of one provider: wire family, endpoint, where the
/// credential lives, rate limit, retry policy, and token prices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProviderConfig {
    pub name: String,
    pub kind: ProviderKind,
    pub endpoint: String,
    /// Name of the environment variable holding the API key. The key itself
    /// is never stored in configuration or artifacts.
    pub credential_env: String,
    pub requests_per_minute: u32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base_delay")]
    pub retry_base_delay_seconds: f64,
    #[serde(default)]
    pub price_per_million_input_tokens: f64,
    #[serde(default)]
    pub price_per_million_output_tokens: f64,
}

fn default_max_retries() -> u32 {
    3
}

fn default_retry_base_delay() -> f64 {
    1.0
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ClientError> {
        let fail = |message: String| Err(ClientError::Validation { message });
        if self.name.is_empty() {
            return fail("provider name must be non-empty".into());
        }
        if self.requests_per_minute < 1 {
            return fail("requests_per_minute must be at least 1".into());
        }
        if self.retry_base_delay_seconds < 0.0 {
            return fail("retry_base_delay_seconds must be non-negative".into());
        }
        if self.price_per_million_input_tokens < 0.0 || self.price_per_million_output_tokens < 0.0 {
            return fail("token prices must be non-negative".into());
        }
        Ok(())
    }

    pub fn retry_base_delay(&self) -> Duration {
        Duration::from_secs_f64(self.retry_base_delay_seconds)
    }
}

/// Anything that can answer completion requests: a live client, a mock, or
/// a cassette replay.
pub trait Provider: Send + Sync {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ClientError>;
}

/// A single delivery attempt over some wire. The [`Client`] adds rate
/// limiting and retries on top.
pub trait Transport: Send + Sync {
    fn send(&self, request: &ModelRequest) -> Result<TransportReply, ClientError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportReply {
    pub text: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
}

/// Time source, injectable so rate-limit and retry behavior can be tested
/// on a virtual clock.
pub trait Clock: Send + Sync {
    fn now(&self) -> Instant;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Instant {
        Instant::now()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

/// A clock that only moves when something sleeps on it.
pub struct VirtualClock {
    now: Mutex<Instant>,
}

impl VirtualClock {
    #[allow(clippy::new_without_default)]
    pub fn new() -> Self {
        VirtualClock { now: Mutex::new(Instant::now()) }
    }
}

impl Clock for VirtualClock {
    fn now(&self) -> Instant {
        *self.now.lock().unwrap()
    }

    fn sleep(&self, duration: Duration) {
        *self.now.lock().unwrap() += duration;
    }
}

/// Sliding-window admission control: at most `capacity` admissions within
/// any window. `acquire` blocks (sleeps on the clock) until a slot frees up.
pub struct RateLimiter {
    capacity: usize,
    window: Duration,
    admissions: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn per_minute(capacity: u32) -> Self {
        RateLimiter {
            capacity: capacity as usize,
            window: Duration::from_secs(60),
            admissions: Mutex::new(VecDeque::new()),
        }
    }

    pub fn acquire(&self, clock: &dyn Clock) {
        loop {
            let now = clock.now();
            let mut admissions = self.admissions.lock().unwrap();
            while admissions
                .front()
                .is_some_and(|t| now.duration_since(*t) >= self.window)
            {
                admissions.pop_front();
            }
            if admissions.len() < self.capacity {
                admissions.push_back(now);
                return;
            }
            let oldest = *admissions.front().expect("queue is at capacity");
            drop(admissions);
            let wait = self.window - now.duration_since(oldest);
            clock.sleep(wait);
        }
    }
}

/// Rate-limited, retrying wrapper around a [`Transport`], optionally
/// recording every successful exchange into a cassette.
pub struct Client {
    transport: Box<dyn Transport>,
    limiter: RateLimiter,
    max_retries: u32,
    retry_base_delay: Duration,
    clock: Box<dyn Clock>,
    recorder: Option<CassetteRecorder>,
}

impl Client {
    pub fn new(config: &ProviderConfig, transport: Box<dyn Transport>) -> Self {
        Client {
            transport,
            limiter: RateLimiter::per_minute(config.requests_per_minute),
            max_retries: config.max_retries,
            retry_base_delay: config.retry_base_delay(),
            clock: Box::new(SystemClock),
            recorder: None,
        }
    }

    /// Builds a live HTTP client for the configured wire family.
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let transport = HttpTransport::new(config)?;
        Ok(Client::new(config, Box::new(transport)))
    }

    pub fn with_clock(mut self, clock: Box<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn with_recorder(mut self, recorder: CassetteRecorder) -> Self {
        self.recorder = Some(recorder);
        self
    }

    /// Flushes the recording cassette (if any) to disk.
    pub fn finish_recording(&self) -> Result<(), ClientError> {
        match &self.recorder {
            Some(recorder) => recorder.save(),
            None => Ok(()),
        }
    }
}

impl Provider for Client {
    fn complete(&self, request: &ModelRequest) -> Result<ModelResponse, ClientError> {
        if request.prompt.is_empty() {
            return Err(ClientError::Validation { message: "prompt must be non-empty".into() });
        }

        let mut attempts = 0u32;
        loop {
            attempts += 1;
            self.limiter.acquire(self.clock.as_ref());
            let start = self.clock.now();
            match self.transport.send(request) {
                Ok(reply) => {
                    let elapsed_seconds = self.clock.now().duration_since(start).as_secs_f64();
                    if let Some(recorder) = &self.recorder {
                        recorder.record(request, &reply, elapsed_seconds)?;
                    }
                    return Ok(ModelResponse {
                        text: reply.text,
                        input_tokens: reply.input_tokens,
                        output_tokens: reply.output_tokens,
                        elapsed_seconds,
                        attempt_count: attempts,
                    });
                }
                Err(err) if err.is_transient() && attempts <= self.max_retries => {
                    let delay = self.retry_base_delay * 2u32.pow(attempts - 1);
                    self.clock.sleep(delay);
                }
                Err(err) if err.is_transient() && attempts > 1 => {
                    return Err(ClientError::RetriesExhausted {
                        attempts,
                        source: Box::new(err),
                    });
                }
                Err(err) => return Err(err),
            }
        }
    }
}

/// s/page and $/1,000 pages for one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub pages: u64,
    pub total_seconds: f64,
    pub seconds_per_page: f64,
    pub dollars_per_1000_pages: f64,
}

/// Cost arithmetic over raw totals; pure, exact for rational prices.
pub fn cost_from_totals(
    pages: u64,
    total_seconds: f64,
    input_tokens: u64,
    output_tokens: u64,
    price_per_million_input_tokens: f64,
    price_per_million_output_tokens: f64,
) -> Result<CostReport, ClientError> {
    if pages == 0 {
        return Err(ClientError::Validation { message: "pages must be at least 1".into() });
    }
    let run_cost = input_tokens as f64 / 1e6 * price_per_million_input_tokens
        + output_tokens as f64 / 1e6 * price_per_million_output_tokens;
    Ok(CostReport {
        pages,
        total_seconds,
        seconds_per_page: total_seconds / pages as f64,
        dollars_per_1000_pages: run_cost * 1000.0 / pages as f64,
    })
}

/// Summarizes a batch of responses into the run's cost figures.
pub fn cost_report(
    responses: &[ModelResponse],
    config: &ProviderConfig,
    pages: u64,
) -> Result<CostReport, ClientError> {
    cost_from_totals(
        pages,
        responses.iter().map(|r| r.elapsed_seconds).sum(),
        responses.iter().map(|r| r.input_tokens).sum(),
        responses.iter().map(|r| r.output_tokens).sum(),
        config.price_per_million_input_tokens,
        config.price_per_million_output_tokens,
    )
}
