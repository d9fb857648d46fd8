//! Uniform access to every model role over a chat-completions wire protocol.
//!
//! A [`Gateway`] owns the endpoint profiles of a run. HTTP endpoints are
//! called with retries, exponential backoff, and a per-endpoint in-flight
//! limit. Mock endpoints replay scripts registered with
//! [`Gateway::register_mock_script`], which is how the whole pipeline is
//! tested offline. Every successful response is recorded in the run's
//! [`TokenLedger`].

mod mock;
pub mod wire;

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::whitespace_tokens;

pub use mock::{FailureKind, MockEntry};
use mock::{MockState, Pop};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleHint {
    Answerer,
    Recruiter,
    Scorer,
    Tool,
    Aggregator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Http,
    Mock,
}

fn default_temperature() -> f32 {
    0.7
}
fn default_max_retries() -> u32 {
    2
}
fn default_timeout_ms() -> u64 {
    60_000
}
fn default_max_in_flight() -> usize {
    4
}
fn default_backoff_base_ms() -> u64 {
    250
}
fn default_role() -> RoleHint {
    RoleHint::Answerer
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointProfile {
    pub endpoint_id: String,
    #[serde(default)]
    pub backend: BackendKind,
    #[serde(default)]
    pub base_url: String,
    #[serde(default)]
    pub model_name: String,
    #[serde(default = "default_temperature")]
    pub temperature: f32,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_role")]
    pub role_hint: RoleHint,
    /// Name of the environment variable holding a bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub api_key_env: Option<String>,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_backoff_base_ms")]
    pub backoff_base_ms: u64,
    /// Artificial delay per mock reply, for benchmarks.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub mock_latency_ms: u64,
}

fn is_zero(v: &u64) -> bool {
    *v == 0
}

impl EndpointProfile {
    pub fn mock(endpoint_id: impl Into<String>, role_hint: RoleHint) -> Self {
        let endpoint_id = endpoint_id.into();
        Self {
            base_url: format!("mock://{endpoint_id}"),
            model_name: endpoint_id.clone(),
            endpoint_id,
            backend: BackendKind::Mock,
            temperature: default_temperature(),
            max_retries: default_max_retries(),
            timeout_ms: default_timeout_ms(),
            role_hint,
            api_key_env: None,
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: 0,
            mock_latency_ms: 0,
        }
    }

    pub fn http(
        endpoint_id: impl Into<String>,
        base_url: impl Into<String>,
        model_name: impl Into<String>,
        role_hint: RoleHint,
    ) -> Self {
        Self {
            endpoint_id: endpoint_id.into(),
            backend: BackendKind::Http,
            base_url: base_url.into(),
            model_name: model_name.into(),
            temperature: default_temperature(),
            max_retries: default_max_retries(),
            timeout_ms: default_timeout_ms(),
            role_hint,
            api_key_env: None,
            max_in_flight: default_max_in_flight(),
            backoff_base_ms: default_backoff_base_ms(),
            mock_latency_ms: 0,
        }
    }

    pub fn is_mock(&self) -> bool {
        self.backend == BackendKind::Mock
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        let bad = |reason: &str| GatewayError::InvalidProfile {
            endpoint_id: self.endpoint_id.clone(),
            reason: reason.to_string(),
        };
        if self.endpoint_id.trim().is_empty() {
            return Err(bad("endpoint_id is empty"));
        }
        if !(self.temperature.is_finite() && (0.0..=2.0).contains(&self.temperature)) {
            return Err(bad("temperature must lie in [0, 2]"));
        }
        if self.timeout_ms == 0 {
            return Err(bad("timeout_ms must be positive"));
        }
        if self.max_in_flight == 0 {
            return Err(bad("max_in_flight must be at least 1"));
        }
        if self.backend == BackendKind::Http
            && !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://"))
        {
            return Err(bad("base_url must be an http(s) URL"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ImagePayload {
    Inline { bytes: Arc<[u8]>, media_type: String },
    Url(String),
}

impl ImagePayload {
    pub fn inline(bytes: impl Into<Vec<u8>>, media_type: impl Into<String>) -> Self {
        ImagePayload::Inline { bytes: Arc::from(bytes.into()), media_type: media_type.into() }
    }

    /// Load an image file; `http(s)://` locations become URL attachments.
    pub fn load(location: &str, base_dir: &Path) -> std::io::Result<Self> {
        if location.starts_with("http://") || location.starts_with("https://") {
            return Ok(ImagePayload::Url(location.to_string()));
        }
        let path = base_dir.join(location);
        let bytes = std::fs::read(&path)?;
        let media_type = match path.extension().and_then(|e| e.to_str()).map(str::to_lowercase) {
            Some(e) if e == "jpg" || e == "jpeg" => "image/jpeg",
            Some(e) if e == "gif" => "image/gif",
            Some(e) if e == "webp" => "image/webp",
            _ => "image/png",
        };
        Ok(Self::inline(bytes, media_type))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: Role,
    pub text: String,
    pub image: Option<ImagePayload>,
}

impl ChatMessage {
    pub fn user(text: impl Into<String>) -> Self {
        Self { role: Role::User, text: text.into(), image: None }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: Role::Assistant, text: text.into(), image: None }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, text: text.into(), image: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    /// Overrides the profile temperature.
    pub temperature: Option<f32>,
    /// Overrides the profile timeout.
    pub timeout: Option<Duration>,
}

impl ChatRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        Self { messages, ..Default::default() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::new(vec![ChatMessage::user(text)])
    }

    /// Attach an image to the first user message.
    pub fn with_image(mut self, image: ImagePayload) -> Self {
        if let Some(m) = self.messages.iter_mut().find(|m| m.role == Role::User) {
            m.image = Some(image);
        }
        self
    }

    pub fn with_temperature(mut self, t: f32) -> Self {
        self.temperature = Some(t);
        self
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = Some(t);
        self
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(GatewayError::InvalidRequest("at least one user message is required".into()));
        }
        if self.messages.iter().any(|m| m.role != Role::User && m.image.is_some()) {
            return Err(GatewayError::InvalidRequest("images are only allowed on user messages".into()));
        }
        Ok(())
    }

    /// All message text concatenated, used for mock key matching.
    fn joined_text(&self) -> String {
        self.messages.iter().map(|m| m.text.as_str()).collect::<Vec<_>>().join("\n")
    }

    pub fn last_user_text(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub latency: Duration,
    /// Token counts are whitespace estimates because the backend sent no usage.
    pub approximate_usage: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptFailure {
    pub kind: FailureKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GatewayError {
    #[error("unknown endpoint `{0}`")]
    UnknownEndpoint(String),
    #[error("invalid endpoint profile `{endpoint_id}`: {reason}")]
    InvalidProfile { endpoint_id: String, reason: String },
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
    #[error("endpoint `{endpoint_id}` failed after {attempts} attempts: {last}")]
    ExhaustedRetries { endpoint_id: String, attempts: u32, last: String },
    #[error("endpoint `{endpoint_id}` timed out on all {attempts} attempts")]
    Timeout { endpoint_id: String, attempts: u32 },
    #[error("malformed wire response from `{endpoint_id}`: {detail}")]
    MalformedWireResponse { endpoint_id: String, detail: String },
    #[error("endpoint `{endpoint_id}` answered HTTP {status}: {body}")]
    HttpStatus { endpoint_id: String, status: u16, body: String },
    #[error("credential variable `{0}` is not set")]
    MissingCredential(String),
    #[error("mock script for `{0}` is exhausted")]
    ScriptExhausted(String),
    #[error("endpoint `{0}` is not a mock endpoint")]
    NotAMockEndpoint(String),
}

/// The outcome of one `send_chat`, with every failed attempt along the way.
#[derive(Debug, Clone)]
pub struct Exchange {
    pub failed_attempts: Vec<AttemptFailure>,
    pub result: Result<ChatResponse, GatewayError>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub endpoint_id: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub approximate: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenTotals {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub calls: u64,
    pub approximate_calls: u64,
}

impl TokenTotals {
    pub fn total(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }

    pub fn add(&mut self, r: &UsageRecord) {
        self.prompt_tokens += r.prompt_tokens;
        self.completion_tokens += r.completion_tokens;
        self.calls += 1;
        self.approximate_calls += r.approximate as u64;
    }

    pub fn merge(&mut self, other: &TokenTotals) {
        self.prompt_tokens += other.prompt_tokens;
        self.completion_tokens += other.completion_tokens;
        self.calls += other.calls;
        self.approximate_calls += other.approximate_calls;
    }
}

#[derive(Debug, Default)]
pub struct TokenLedger {
    records: Mutex<Vec<UsageRecord>>,
}

impl TokenLedger {
    pub fn record(&self, r: UsageRecord) {
        self.records.lock().expect("ledger poisoned").push(r);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().expect("ledger poisoned").clone()
    }

    pub fn totals(&self) -> TokenTotals {
        let mut t = TokenTotals::default();
        for r in self.records.lock().expect("ledger poisoned").iter() {
            t.add(r);
        }
        t
    }
}

struct InFlight {
    max: usize,
    current: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(max: usize) -> Self {
        Self { max, current: Mutex::new(0), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.current.lock().expect("in-flight poisoned");
        while *n >= self.max {
            n = self.freed.wait(n).expect("in-flight poisoned");
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.current.lock().expect("in-flight poisoned") -= 1;
        self.0.freed.notify_one();
    }
}

struct Endpoint {
    profile: EndpointProfile,
    in_flight: InFlight,
    mock: Option<Mutex<MockState>>,
}

/// Delay before retry number `retry` (1-based): `base · 2^(retry-1)` scaled
/// by `1 + jitter`, where `jitter` is expected in `[-0.2, 0.2]`.
pub fn backoff_delay(base: Duration, retry: u32, jitter: f64) -> Duration {
    let factor = 2f64.powi(retry.saturating_sub(1) as i32) * (1.0 + jitter);
    base.mul_f64(factor.max(0.0))
}

pub struct Gateway {
    endpoints: HashMap<String, Endpoint>,
    ledger: TokenLedger,
    http: ureq::Agent,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut ids: Vec<_> = self.endpoints.keys().collect();
        ids.sort();
        f.debug_struct("Gateway").field("endpoints", &ids).finish()
    }
}

impl Default for Gateway {
    fn default() -> Self {
        let config = ureq::Agent::config_builder().http_status_as_error(false).build();
        Self { endpoints: HashMap::new(), ledger: TokenLedger::default(), http: ureq::Agent::new_with_config(config) }
    }
}

impl Gateway {
    pub fn new(profiles: impl IntoIterator<Item = EndpointProfile>) -> Result<Self, GatewayError> {
        let mut g = Self::default();
        for p in profiles {
            g.add_endpoint(p)?;
        }
        Ok(g)
    }

    pub fn add_endpoint(&mut self, profile: EndpointProfile) -> Result<(), GatewayError> {
        profile.validate()?;
        if self.endpoints.contains_key(&profile.endpoint_id) {
            return Err(GatewayError::InvalidProfile {
                endpoint_id: profile.endpoint_id.clone(),
                reason: "duplicate endpoint_id".into(),
            });
        }
        let mock = profile.is_mock().then(|| Mutex::new(MockState::default()));
        self.endpoints.insert(
            profile.endpoint_id.clone(),
            Endpoint { in_flight: InFlight::new(profile.max_in_flight), profile, mock },
        );
        Ok(())
    }

    pub fn profile(&self, endpoint_id: &str) -> Option<&EndpointProfile> {
        self.endpoints.get(endpoint_id).map(|e| &e.profile)
    }

    pub fn ledger(&self) -> &TokenLedger {
        &self.ledger
    }

    /// Lane key for [`crate::parallel::map_in_lanes`]: calls to one mock are
    /// serialized so scripts are consumed in a reproducible order.
    pub fn lane(&self, endpoint_id: &str) -> Option<String> {
        match self.profile(endpoint_id) {
            Some(p) if p.is_mock() => Some(endpoint_id.to_string()),
            _ => None,
        }
    }

    /// Replace the default script of a mock endpoint.
    pub fn register_mock_script(
        &self,
        endpoint_id: &str,
        script: impl IntoIterator<Item = MockEntry>,
    ) -> Result<(), GatewayError> {
        self.mock_state(endpoint_id)?.lock().expect("mock poisoned").set_default(script.into_iter().collect());
        Ok(())
    }

    /// Register a script used only for requests whose text contains `key`.
    pub fn register_mock_keyed_script(
        &self,
        endpoint_id: &str,
        key: impl Into<String>,
        script: impl IntoIterator<Item = MockEntry>,
    ) -> Result<(), GatewayError> {
        self.mock_state(endpoint_id)?
            .lock()
            .expect("mock poisoned")
            .set_keyed(key.into(), script.into_iter().collect());
        Ok(())
    }

    /// Entries left across all scripts of a mock endpoint.
    pub fn mock_remaining(&self, endpoint_id: &str) -> Result<usize, GatewayError> {
        Ok(self.mock_state(endpoint_id)?.lock().expect("mock poisoned").remaining())
    }

    fn mock_state(&self, endpoint_id: &str) -> Result<&Mutex<MockState>, GatewayError> {
        let ep = self
            .endpoints
            .get(endpoint_id)
            .ok_or_else(|| GatewayError::UnknownEndpoint(endpoint_id.to_string()))?;
        ep.mock.as_ref().ok_or_else(|| GatewayError::NotAMockEndpoint(endpoint_id.to_string()))
    }

    pub fn send_chat(&self, endpoint_id: &str, request: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        self.exchange(endpoint_id, request).result
    }

    /// Like [`Gateway::send_chat`] but keeps the log of failed attempts.
    pub fn exchange(&self, endpoint_id: &str, request: &ChatRequest) -> Exchange {
        let mut failed_attempts = Vec::new();
        let result = self.exchange_inner(endpoint_id, request, &mut failed_attempts);
        Exchange { failed_attempts, result }
    }

    fn exchange_inner(
        &self,
        endpoint_id: &str,
        request: &ChatRequest,
        failures: &mut Vec<AttemptFailure>,
    ) -> Result<ChatResponse, GatewayError> {
        let ep = self
            .endpoints
            .get(endpoint_id)
            .ok_or_else(|| GatewayError::UnknownEndpoint(endpoint_id.to_string()))?;
        request.validate()?;
        let profile = &ep.profile;
        let _permit = ep.in_flight.acquire();
        let base = Duration::from_millis(profile.backoff_base_ms);
        let mut rng = rand::thread_rng();

        for attempt in 0..=profile.max_retries {
            if attempt > 0 && !base.is_zero() {
                std::thread::sleep(backoff_delay(base, attempt, rng.gen_range(-0.2..=0.2)));
            }
            let started = Instant::now();
            let outcome = match &ep.mock {
                Some(state) => self.attempt_mock(profile, state, request),
                None => self.attempt_http(profile, request),
            };
            match outcome {
                Ok(decoded) => {
                    let latency = started.elapsed();
                    let (prompt_tokens, completion_tokens, approximate) = match decoded.usage {
                        Some((p, c)) => (p, c, false),
                        None => (
                            request.messages.iter().map(|m| whitespace_tokens(&m.text)).sum(),
                            whitespace_tokens(&decoded.content),
                            true,
                        ),
                    };
                    self.ledger.record(UsageRecord {
                        endpoint_id: endpoint_id.to_string(),
                        prompt_tokens,
                        completion_tokens,
                        approximate,
                    });
                    tracing::debug!(endpoint = endpoint_id, attempt, ?latency, "chat ok");
                    return Ok(ChatResponse {
                        text: decoded.content,
                        prompt_tokens,
                        completion_tokens,
                        latency,
                        approximate_usage: approximate,
                    });
                }
                Err((failure, fatal)) => {
                    tracing::warn!(endpoint = endpoint_id, attempt, detail = %failure.detail, "chat attempt failed");
                    let retryable = failure.kind.is_retryable();
                    failures.push(failure);
                    if !retryable {
                        return Err(fatal.expect("non-retryable failures carry an error"));
                    }
                }
            }
        }
        let attempts = profile.max_retries + 1;
        if failures.iter().all(|f| f.kind == FailureKind::Timeout) {
            Err(GatewayError::Timeout { endpoint_id: endpoint_id.to_string(), attempts })
        } else {
            Err(GatewayError::ExhaustedRetries {
                endpoint_id: endpoint_id.to_string(),
                attempts,
                last: failures.last().map(|f| f.detail.clone()).unwrap_or_default(),
            })
        }
    }

    fn attempt_mock(
        &self,
        profile: &EndpointProfile,
        state: &Mutex<MockState>,
        request: &ChatRequest,
    ) -> Result<wire::DecodedResponse, (AttemptFailure, Option<GatewayError>)> {
        let id = &profile.endpoint_id;
        let popped = state.lock().expect("mock poisoned").pop(&request.joined_text());
        if profile.mock_latency_ms > 0 {
            std::thread::sleep(Duration::from_millis(profile.mock_latency_ms));
        }
        match popped {
            Pop::Exhausted => Err((
                AttemptFailure { kind: FailureKind::Fatal, detail: "mock script exhausted".into() },
                Some(GatewayError::ScriptExhausted(id.clone())),
            )),
            Pop::Entry(MockEntry::Reply(text)) => Ok(wire::DecodedResponse { content: text, usage: None }),
            Pop::Entry(MockEntry::Failure { fail }) => {
                let detail = match fail {
                    FailureKind::Transient => "scripted transient failure",
                    FailureKind::Timeout => "scripted timeout",
                    FailureKind::Malformed => "scripted malformed response",
                    FailureKind::Fatal => "scripted fatal failure",
                };
                let fatal = match fail {
                    FailureKind::Malformed => Some(GatewayError::MalformedWireResponse {
                        endpoint_id: id.clone(),
                        detail: detail.into(),
                    }),
                    FailureKind::Fatal => Some(GatewayError::HttpStatus {
                        endpoint_id: id.clone(),
                        status: 400,
                        body: detail.into(),
                    }),
                    _ => None,
                };
                Err((AttemptFailure { kind: fail, detail: detail.into() }, fatal))
            }
        }
    }

    fn attempt_http(
        &self,
        profile: &EndpointProfile,
        request: &ChatRequest,
    ) -> Result<wire::DecodedResponse, (AttemptFailure, Option<GatewayError>)> {
        let id = &profile.endpoint_id;
        let fatal = |kind: FailureKind, e: GatewayError| (AttemptFailure { kind, detail: e.to_string() }, Some(e));
        let transient = |kind: FailureKind, detail: String| (AttemptFailure { kind, detail }, None);

        let temperature = request.temperature.unwrap_or(profile.temperature);
        let body = wire::encode_request(&profile.model_name, temperature, request).to_string();
        let url = format!("{}/chat/completions", profile.base_url.trim_end_matches('/'));
        let mut builder = self.http.post(&url).header("Content-Type", "application/json");
        if let Some(var) = &profile.api_key_env {
            let key = std::env::var(var)
                .map_err(|_| fatal(FailureKind::Fatal, GatewayError::MissingCredential(var.clone())))?;
            builder = builder.header("Authorization", format!("Bearer {key}"));
        }
        let timeout = request.timeout.unwrap_or_else(|| profile.timeout());
        let response = builder.config().timeout_global(Some(timeout)).build().send(body.as_str());
        let response = match response {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(transient(FailureKind::Timeout, format!("timed out after {timeout:?}")))
            }
            Err(e) => return Err(transient(FailureKind::Transient, e.to_string())),
        };
        let status = response.status().as_u16();
        let text = match response.into_body().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Err(transient(FailureKind::Timeout, format!("timed out after {timeout:?}")))
            }
            Err(e) => return Err(transient(FailureKind::Transient, e.to_string())),
        };
        if status == 408 || status == 429 || status >= 500 {
            return Err(transient(FailureKind::Transient, format!("HTTP {status}")));
        }
        if !(200..300).contains(&status) {
            let body: String = text.chars().take(200).collect();
            return Err(fatal(
                FailureKind::Fatal,
                GatewayError::HttpStatus { endpoint_id: id.clone(), status, body },
            ));
        }
        wire::decode_response(&text).map_err(|detail| {
            fatal(
                FailureKind::Malformed,
                GatewayError::MalformedWireResponse { endpoint_id: id.clone(), detail },
            )
        })
    }
}
