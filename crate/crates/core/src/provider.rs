//! Chat-completions client with retries, rate limiting and a scripted mock.
//!
//! A [`Provider`] owns the retry loop and a token-bucket rate limiter; the
//! actual I/O sits behind [`Transport`] so the HTTP client and the mock share
//! the same retry and pacing behaviour. Time is read through [`Clock`] so
//! tests can run against a virtual clock.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::prompts::{ContentPart, PromptPackage, StrategyKind};

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("transport failed after {attempts} attempt(s): {last}")]
    Transport { attempts: u32, last: String },
    #[error("credential error: {0}")]
    Credential(String),
    #[error("payload of {size} bytes exceeds the {limit} byte limit")]
    Payload { size: usize, limit: usize },
    #[error("request rejected with status {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    Response(String),
    #[error("mock script exhausted after {served} response(s)")]
    ScriptExhausted { served: usize },
    #[error("invalid provider config: {0}")]
    Config(String),
    #[error("cannot read mock script: {0}")]
    Script(String),
}

impl ProviderError {
    /// Whether a run should stop instead of marking the request's items
    /// unparseable.
    pub fn is_fatal(&self) -> bool {
        matches!(
            self,
            ProviderError::Credential(_)
                | ProviderError::ScriptExhausted { .. }
                | ProviderError::Config(_)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    pub timeout_secs: u64,
    pub max_retries: u32,
    pub initial_backoff_ms: u64,
    pub max_requests_per_minute: u32,
    pub temperature: f64,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    pub max_payload_bytes: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            timeout_secs: 120,
            max_retries: 4,
            initial_backoff_ms: 1000,
            max_requests_per_minute: 20,
            temperature: 0.0,
            credential_env: "OPENAI_API_KEY".into(),
            max_payload_bytes: 20 * 1024 * 1024,
        }
    }
}

impl ProviderConfig {
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self, ProviderError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = toml::from_str(&text)
            .map_err(|e| ProviderError::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ProviderError> {
        if self.timeout_secs == 0 {
            return Err(ProviderError::Config("timeout_secs must be > 0".into()));
        }
        if self.max_requests_per_minute == 0 {
            return Err(ProviderError::Config(
                "max_requests_per_minute must be > 0".into(),
            ));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(ProviderError::Config("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

/// Time source. Implementations must be safe to share across threads.
pub trait Clock: Send + Sync {
    /// Monotonic time since an arbitrary origin.
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
    fn unix_millis(&self) -> u64;
}

#[derive(Debug)]
pub struct SystemClock {
    origin: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        Self {
            origin: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.origin.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }

    fn unix_millis(&self) -> u64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as u64)
            .unwrap_or_default()
    }
}

/// Virtual clock: `sleep` advances time instantly and is logged.
#[derive(Debug, Default)]
pub struct MockClock {
    state: Mutex<(Duration, Vec<Duration>)>,
}

impl MockClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, by: Duration) {
        self.state.lock().unwrap().0 += by;
    }

    pub fn sleeps(&self) -> Vec<Duration> {
        self.state.lock().unwrap().1.clone()
    }
}

impl Clock for MockClock {
    fn now(&self) -> Duration {
        self.state.lock().unwrap().0
    }

    fn sleep(&self, duration: Duration) {
        let mut state = self.state.lock().unwrap();
        state.0 += duration;
        state.1.push(duration);
    }

    fn unix_millis(&self) -> u64 {
        self.now().as_millis() as u64
    }
}

/// Token bucket refilled at `per_minute / 60` tokens per second.
///
/// Acquisition reserves a token immediately, letting the balance go
/// negative, then sleeps until the reservation is covered. Concurrent
/// callers therefore queue in arrival order.
#[derive(Debug)]
pub struct TokenBucket {
    capacity: f64,
    per_second: f64,
    state: Mutex<(f64, Duration)>,
}

impl TokenBucket {
    pub fn new(per_minute: u32, capacity: u32) -> Self {
        let capacity = f64::from(capacity.max(1));
        Self {
            capacity,
            per_second: f64::from(per_minute) / 60.0,
            state: Mutex::new((capacity, Duration::ZERO)),
        }
    }

    /// Blocks (through `clock`) until a token is available.
    pub fn acquire(&self, clock: &dyn Clock) {
        let wait = {
            let mut state = self.state.lock().unwrap();
            let now = clock.now();
            let elapsed = now.saturating_sub(state.1).as_secs_f64();
            state.0 = (state.0 + elapsed * self.per_second).min(self.capacity);
            state.1 = now;
            state.0 -= 1.0;
            if state.0 < 0.0 {
                Duration::from_secs_f64(-state.0 / self.per_second)
            } else {
                Duration::ZERO
            }
        };
        if !wait.is_zero() {
            clock.sleep(wait);
        }
    }
}

#[derive(Debug, Serialize)]
struct ImageUrl {
    url: String,
}

#[derive(Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum WirePart<'a> {
    Text { text: &'a str },
    ImageUrl { image_url: ImageUrl },
}

#[derive(Debug, Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: Vec<WirePart<'a>>,
}

#[derive(Debug, Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: Vec<WireMessage<'a>>,
}

/// Serialises `package` as a chat-completions request body. Images are
/// inlined as base64 data URLs. Output is byte-stable for equal inputs.
pub fn encode_request(package: &PromptPackage, config: &ProviderConfig) -> Vec<u8> {
    let b64 = base64::engine::general_purpose::STANDARD;
    let messages = package
        .messages
        .iter()
        .map(|m| WireMessage {
            role: "user",
            content: m
                .parts
                .iter()
                .map(|p| match p {
                    ContentPart::Text(text) => WirePart::Text { text },
                    ContentPart::Image(a) => WirePart::ImageUrl {
                        image_url: ImageUrl {
                            url: format!("data:{};base64,{}", a.media_type, b64.encode(&a.data)),
                        },
                    },
                })
                .collect(),
        })
        .collect();
    serde_json::to_vec(&WireRequest {
        model: &config.model,
        temperature: config.temperature,
        messages,
    })
    .expect("request body serialises")
}

/// One attempt's failure, as seen by the retry loop.
#[derive(Debug)]
pub enum AttemptError {
    /// Worth retrying: timeouts, 429, 5xx, connection resets.
    Transient(String),
    /// Stop immediately with this error.
    Fatal(ProviderError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttemptReply {
    pub text: String,
    pub request_id: Option<String>,
}

/// A single request/response exchange.
pub trait Transport: Send + Sync {
    /// Checks that run before any request goes out.
    fn preflight(&self) -> Result<(), ProviderError> {
        Ok(())
    }

    fn attempt(
        &self,
        package: &PromptPackage,
        body: &[u8],
    ) -> Result<AttemptReply, AttemptError>;

    /// Upper bound on useful parallel requests.
    fn max_concurrency(&self) -> usize {
        usize::MAX
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelResponse {
    pub text: String,
    pub request_id: String,
    pub latency_ms: u64,
    pub attempts: u32,
    pub timestamp_ms: u64,
}

pub struct Provider {
    config: ProviderConfig,
    transport: Arc<dyn Transport>,
    clock: Arc<dyn Clock>,
    limiter: TokenBucket,
    sequence: AtomicU64,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Provider {
    pub fn new(
        config: ProviderConfig,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
    ) -> Result<Self, ProviderError> {
        config.validate()?;
        Ok(Self {
            limiter: TokenBucket::new(config.max_requests_per_minute, 1),
            config,
            transport,
            clock,
            sequence: AtomicU64::new(0),
        })
    }

    /// Live HTTP provider on the system clock.
    pub fn http(config: ProviderConfig) -> Result<Self, ProviderError> {
        let transport = HttpTransport::new(&config)?;
        Self::new(config, Arc::new(transport), Arc::new(SystemClock::default()))
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn max_concurrency(&self) -> usize {
        self.transport.max_concurrency()
    }

    /// Fails fast when the transport cannot authenticate.
    pub fn check_credentials(&self) -> Result<(), ProviderError> {
        self.transport.preflight()
    }

    /// Sends `package`, retrying transient failures with exponential backoff
    /// starting at `initial_backoff_ms`.
    pub fn send(&self, package: &PromptPackage) -> Result<ModelResponse, ProviderError> {
        self.transport.preflight()?;
        let body = encode_request(package, &self.config);
        if body.len() > self.config.max_payload_bytes {
            return Err(ProviderError::Payload {
                size: body.len(),
                limit: self.config.max_payload_bytes,
            });
        }
        let seq = self.sequence.fetch_add(1, Ordering::SeqCst) + 1;
        let started = self.clock.now();
        let mut backoff = Duration::from_millis(self.config.initial_backoff_ms);
        let mut attempts = 0;
        loop {
            attempts += 1;
            self.limiter.acquire(self.clock.as_ref());
            match self.transport.attempt(package, &body) {
                Ok(reply) => {
                    return Ok(ModelResponse {
                        text: reply.text,
                        request_id: reply.request_id.unwrap_or_else(|| format!("req-{seq:06}")),
                        latency_ms: self.clock.now().saturating_sub(started).as_millis() as u64,
                        attempts,
                        timestamp_ms: self.clock.unix_millis(),
                    })
                }
                Err(AttemptError::Fatal(e)) => return Err(e),
                Err(AttemptError::Transient(last)) => {
                    if attempts > self.config.max_retries {
                        return Err(ProviderError::Transport { attempts, last });
                    }
                    self.clock.sleep(backoff);
                    backoff = backoff.saturating_mul(2);
                }
            }
        }
    }
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
    endpoint: String,
    credential_env: String,
}

impl HttpTransport {
    pub fn new(config: &ProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Config(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: config.endpoint.clone(),
            credential_env: config.credential_env.clone(),
        })
    }

    fn credential(&self) -> Result<String, ProviderError> {
        match std::env::var(&self.credential_env) {
            Ok(v) if !v.trim().is_empty() => Ok(v),
            _ => Err(ProviderError::Credential(format!(
                "environment variable {} is unset or empty",
                self.credential_env
            ))),
        }
    }
}

/// Pulls the first choice's message text out of a chat-completions reply.
pub fn decode_response(body: &[u8]) -> Result<AttemptReply, ProviderError> {
    let value: serde_json::Value =
        serde_json::from_slice(body).map_err(|e| ProviderError::Response(e.to_string()))?;
    let content = &value["choices"][0]["message"]["content"];
    let text = match content {
        serde_json::Value::String(s) => s.clone(),
        serde_json::Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(ProviderError::Response(
                "missing choices[0].message.content".into(),
            ))
        }
    };
    Ok(AttemptReply {
        text,
        request_id: value["id"].as_str().map(str::to_string),
    })
}

impl Transport for HttpTransport {
    fn preflight(&self) -> Result<(), ProviderError> {
        self.credential().map(|_| ())
    }

    fn attempt(
        &self,
        _package: &PromptPackage,
        body: &[u8],
    ) -> Result<AttemptReply, AttemptError> {
        let key = self.credential().map_err(AttemptError::Fatal)?;
        let response = self
            .client
            .post(&self.endpoint)
            .bearer_auth(key)
            .header(reqwest::header::CONTENT_TYPE, "application/json")
            .body(body.to_vec())
            .send()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        let status = response.status().as_u16();
        let bytes = response
            .bytes()
            .map_err(|e| AttemptError::Transient(e.to_string()))?;
        match status {
            200..=299 => decode_response(&bytes).map_err(AttemptError::Fatal),
            401 | 403 => Err(AttemptError::Fatal(ProviderError::Credential(format!(
                "endpoint returned {status}"
            )))),
            413 => Err(AttemptError::Fatal(ProviderError::Payload {
                size: body.len(),
                limit: body.len().saturating_sub(1),
            })),
            408 | 429 | 500..=599 => Err(AttemptError::Transient(format!("status {status}"))),
            _ => Err(AttemptError::Fatal(ProviderError::Rejected {
                status,
                body: String::from_utf8_lossy(&bytes).chars().take(500).collect(),
            })),
        }
    }
}

/// One scripted mock reply.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScriptEntry {
    Text(String),
    /// HTTP-style failure; 429, 408 and 5xx are transient.
    Failure(u16),
    /// Answer every query with the class encoded in its item id
    /// (`<split>/<class>/<file>`).
    Truth,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptLine {
    text: Option<String>,
    status: Option<u16>,
    truth: Option<bool>,
    times: Option<usize>,
}

/// Reads a mock script: one JSON object per line, each holding exactly one
/// of `text`, `status` or `truth: true`, plus an optional `times` repeat.
pub fn load_script(path: impl AsRef<Path>) -> Result<Vec<ScriptEntry>, ProviderError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| ProviderError::Script(format!("{}: {e}", path.display())))?;
    parse_script(&text)
}

pub fn parse_script(text: &str) -> Result<Vec<ScriptEntry>, ProviderError> {
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ScriptLine = serde_json::from_str(line)
            .map_err(|e| ProviderError::Script(format!("line {}: {e}", n + 1)))?;
        let entry = match (parsed.text, parsed.status, parsed.truth) {
            (Some(t), None, None) => ScriptEntry::Text(t),
            (None, Some(s), None) => ScriptEntry::Failure(s),
            (None, None, Some(true)) => ScriptEntry::Truth,
            _ => {
                return Err(ProviderError::Script(format!(
                    "line {}: expected exactly one of text, status, truth",
                    n + 1
                )))
            }
        };
        for _ in 0..parsed.times.unwrap_or(1) {
            entries.push(entry.clone());
        }
    }
    if entries.is_empty() {
        return Err(ProviderError::Script("script is empty".into()));
    }
    Ok(entries)
}

/// What the mock saw for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordedRequest {
    pub text: String,
    pub attachment_digests: Vec<String>,
    pub body_digest: String,
}

#[derive(Debug)]
pub struct MockTransport {
    script: Mutex<VecDeque<ScriptEntry>>,
    served: AtomicU64,
    records: Mutex<Vec<RecordedRequest>>,
}

impl MockTransport {
    pub fn new(script: Vec<ScriptEntry>) -> Result<Self, ProviderError> {
        if script.is_empty() {
            return Err(ProviderError::Script("script is empty".into()));
        }
        Ok(Self {
            script: Mutex::new(script.into()),
            served: AtomicU64::new(0),
            records: Mutex::new(Vec::new()),
        })
    }

    pub fn records(&self) -> Vec<RecordedRequest> {
        self.records.lock().unwrap().clone()
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().unwrap().len()
    }
}

/// Ground-truth reply for `package`, derived from its query item ids.
pub fn truth_reply(package: &PromptPackage) -> String {
    let class_of = |id: &str| id.split('/').nth(1).unwrap_or("unknown").to_string();
    if package.strategy == StrategyKind::Naive {
        let id = package
            .query_index_map
            .first()
            .map(|q| q.item_id.as_str())
            .unwrap_or_default();
        return format!("{}\nScripted reply.", class_of(id));
    }
    let mut lines: Vec<String> = package
        .query_index_map
        .iter()
        .map(|q| format!("Image {}: {}", q.index, class_of(&q.item_id)))
        .collect();
    lines.push("Explanation: scripted reply.".into());
    lines.join("\n")
}

impl Transport for MockTransport {
    fn attempt(
        &self,
        package: &PromptPackage,
        body: &[u8],
    ) -> Result<AttemptReply, AttemptError> {
        // Hold the script lock for the whole attempt so consumption and
        // recording stay in step.
        let mut script = self.script.lock().unwrap();
        self.records.lock().unwrap().push(RecordedRequest {
            text: package.text(),
            attachment_digests: package.attachments().map(|a| a.digest.clone()).collect(),
            body_digest: hex::encode(Sha256::digest(body)),
        });
        let entry = script.pop_front().ok_or_else(|| {
            AttemptError::Fatal(ProviderError::ScriptExhausted {
                served: self.served.load(Ordering::SeqCst) as usize,
            })
        })?;
        self.served.fetch_add(1, Ordering::SeqCst);
        match entry {
            ScriptEntry::Text(text) => Ok(AttemptReply {
                text,
                request_id: None,
            }),
            ScriptEntry::Truth => Ok(AttemptReply {
                text: truth_reply(package),
                request_id: None,
            }),
            ScriptEntry::Failure(code @ (408 | 429 | 500..=599)) => {
                Err(AttemptError::Transient(format!("status {code}")))
            }
            ScriptEntry::Failure(code @ (401 | 403)) => Err(AttemptError::Fatal(
                ProviderError::Credential(format!("scripted status {code}")),
            )),
            ScriptEntry::Failure(code) => Err(AttemptError::Fatal(ProviderError::Rejected {
                status: code,
                body: "scripted failure".into(),
            })),
        }
    }

    fn max_concurrency(&self) -> usize {
        1
    }
}

/// Mock provider on a virtual clock. The returned transport handle exposes
/// what the provider sent.
pub fn mock_provider(
    script: Vec<ScriptEntry>,
    config: ProviderConfig,
) -> Result<(Provider, Arc<MockTransport>), ProviderError> {
    let transport = Arc::new(MockTransport::new(script)?);
    let provider = Provider::new(config, transport.clone(), Arc::new(MockClock::new()))?;
    Ok((provider, transport))
}
