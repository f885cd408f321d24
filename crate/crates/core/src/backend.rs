//! Language-model backends.
//!
//! Every model call in the engine goes through [`Backend::complete`]. The
//! HTTP backend speaks the common chat-completions JSON shape; the mock
//! replays a fixed script and keeps a call log for assertions.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_ENDPOINT: &str = "BARGAIN_LLM_ENDPOINT";
pub const ENV_API_KEY: &str = "BARGAIN_LLM_API_KEY";
pub const ENV_MODEL: &str = "BARGAIN_LLM_MODEL";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendRequest {
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl BackendRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        BackendRequest {
            messages,
            temperature: 0.0,
            max_tokens: 512,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Self {
        self.max_tokens = max_tokens;
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        match self.messages.first() {
            None => Err(BackendError::InvalidRequest("messages must be non-empty".into())),
            Some(m) if m.role == Role::Assistant => Err(BackendError::InvalidRequest(
                "first message must be system or user".into(),
            )),
            _ if self.temperature < 0.0 || !self.temperature.is_finite() => Err(
                BackendError::InvalidRequest("temperature must be non-negative".into()),
            ),
            _ if self.max_tokens == 0 => {
                Err(BackendError::InvalidRequest("max_tokens must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenCounts {
    pub prompt: u64,
    pub completion: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendResponse {
    pub text: String,
    pub latency: Duration,
    pub token_counts: Option<TokenCounts>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider error {status}: {body_excerpt}")]
    Provider { status: u16, body_excerpt: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("backend misconfigured: {0}")]
    Config(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Provider { status, .. } => *status == 429 || (500..600).contains(status),
            _ => false,
        }
    }
}

/// A text-completion provider.
pub trait Backend: Send + Sync {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        (**self).complete(request)
    }
}

/// Scripted backend. Each call returns the next line, wrapping around.
pub struct MockBackend {
    script: Vec<String>,
    state: Mutex<MockState>,
}

#[derive(Default)]
struct MockState {
    next: usize,
    log: Vec<BackendRequest>,
}

impl MockBackend {
    pub fn from_script<S: Into<String>>(
        lines: impl IntoIterator<Item = S>,
    ) -> Result<Self, BackendError> {
        let script: Vec<String> = lines.into_iter().map(Into::into).collect();
        if script.is_empty() {
            return Err(BackendError::Config("mock script must be non-empty".into()));
        }
        Ok(MockBackend {
            script,
            state: Mutex::new(MockState::default()),
        })
    }

    /// Every request recorded so far, in call order.
    pub fn calls(&self) -> Vec<BackendRequest> {
        self.state.lock().expect("mock state").log.clone()
    }

    pub fn call_count(&self) -> usize {
        self.state.lock().expect("mock state").log.len()
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let mut state = self.state.lock().expect("mock state");
        let text = self.script[state.next % self.script.len()].clone();
        state.next += 1;
        state.log.push(request.clone());
        Ok(BackendResponse {
            text,
            latency: Duration::ZERO,
            token_counts: None,
        })
    }
}

/// Backend that always fails; exercises fallback paths.
#[derive(Debug, Default)]
pub struct FailingBackend;

impl Backend for FailingBackend {
    fn complete(&self, _request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        Err(BackendError::Transport("backend unavailable".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay_ms: u64,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 3,
            base_delay_ms: 500,
            factor: 2,
        }
    }
}

impl RetryPolicy {
    fn delay_before(&self, retry: u32) -> Duration {
        Duration::from_millis(self.base_delay_ms * u64::from(self.factor).pow(retry))
    }
}

/// Chat-completions client over HTTP(S).
pub struct HttpBackend {
    endpoint: String,
    model: String,
    api_key: Option<String>,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .field("retry", &self.retry)
            .finish()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>, api_key: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key,
            retry: RetryPolicy::default(),
            agent,
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Builds a client from `BARGAIN_LLM_*` variables.
    pub fn from_env() -> Result<Self, BackendError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| BackendError::Config(format!("{ENV_ENDPOINT} is not set")))?;
        let model = std::env::var(ENV_MODEL).unwrap_or_else(|_| "gpt-4o".to_string());
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(HttpBackend::new(endpoint, model, key))
    }

    fn attempt(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        let started = Instant::now();
        let body = WireRequest {
            model: &self.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let mut call = self
            .agent
            .post(&self.endpoint)
            .config()
            .timeout_global(Some(request.timeout))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call.send_json(&body).map_err(map_ureq_error)?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(map_ureq_error)?;
        if !(200..300).contains(&status) {
            let excerpt: String = text.chars().take(200).collect();
            return Err(BackendError::Provider {
                status,
                body_excerpt: excerpt,
            });
        }
        let wire: WireResponse = serde_json::from_str(&text).map_err(|e| BackendError::Provider {
            status,
            body_excerpt: format!("unparseable body: {e}"),
        })?;
        let content = wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::Provider {
                status,
                body_excerpt: "response has no choices".into(),
            })?;
        Ok(BackendResponse {
            text: content,
            latency: started.elapsed(),
            token_counts: wire.usage.map(|u| TokenCounts {
                prompt: u.prompt_tokens,
                completion: u.completion_tokens,
            }),
        })
    }
}

fn map_ureq_error(err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::Timeout(_) => BackendError::Timeout,
        ureq::Error::Io(e) if e.kind() == std::io::ErrorKind::TimedOut => BackendError::Timeout,
        other => BackendError::Transport(other.to_string()),
    }
}

impl Backend for HttpBackend {
    fn complete(&self, request: &BackendRequest) -> Result<BackendResponse, BackendError> {
        request.validate()?;
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(request) {
                Ok(mut response) => {
                    response.latency = started.elapsed();
                    return Ok(response);
                }
                Err(e) if e.is_retryable() && attempt + 1 < self.retry.max_attempts => {
                    let delay = self.retry.delay_before(attempt);
                    tracing::warn!(attempt = attempt + 1, ?delay, error = %e, "retrying model call");
                    std::thread::sleep(delay);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }
}

/// Per-call-site backend selection, as written in engine config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSettings {
    /// No model: rule and template paths only.
    #[default]
    None,
    Mock { script: Vec<String> },
    Failing,
    /// HTTP backend; unset fields fall back to `BARGAIN_LLM_*` variables.
    /// The API key is only ever read from the environment.
    Http {
        #[serde(default)]
        endpoint: Option<String>,
        #[serde(default)]
        model: Option<String>,
        #[serde(default)]
        retry: Option<RetryPolicy>,
    },
}

impl BackendSettings {
    pub fn build(&self) -> Result<Option<Arc<dyn Backend>>, BackendError> {
        Ok(match self {
            BackendSettings::None => None,
            BackendSettings::Mock { script } => {
                Some(Arc::new(MockBackend::from_script(script.iter().cloned())?))
            }
            BackendSettings::Failing => Some(Arc::new(FailingBackend)),
            BackendSettings::Http {
                endpoint,
                model,
                retry,
            } => {
                let endpoint = match endpoint {
                    Some(e) => e.clone(),
                    None => std::env::var(ENV_ENDPOINT).map_err(|_| {
                        BackendError::Config(format!("{ENV_ENDPOINT} is not set"))
                    })?,
                };
                let model = model
                    .clone()
                    .or_else(|| std::env::var(ENV_MODEL).ok())
                    .unwrap_or_else(|| "gpt-4o".to_string());
                let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
                let backend = HttpBackend::new(endpoint, model, key)
                    .with_retry(retry.unwrap_or_default());
                Some(Arc::new(backend))
            }
        })
    }
}
