//! OpenAI-compatible chat-completions backend.
//!
//! Request: `{model, messages:[{role,content}], temperature, max_tokens}`.
//! Response usage `{prompt_tokens, completion_tokens}` becomes the reply's
//! input/output token counts. The API key is read from the configured
//! environment variable on every call and is never put in errors or logs.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use super::parse::{extract_prediction, parse_addressees, parse_intent};
use super::{count_tokens, AgentReply, Backend, BackendError, TokenScheme, TurnKind, TurnRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    /// Total attempts per call, including the first.
    pub attempts: u32,
    /// Delay before retry `n` is `backoff_ms[n - 1]`, or the last entry once exhausted.
    pub backoff_ms: Vec<u64>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, backoff_ms: vec![500, 2000] }
    }
}

impl RetryPolicy {
    fn delay(&self, retry: u32) -> Duration {
        let idx = (retry as usize).saturating_sub(1);
        let ms = self.backoff_ms.get(idx).or(self.backoff_ms.last()).copied().unwrap_or(0);
        Duration::from_millis(ms)
    }
}

pub const MAX_ATTEMPTS: u32 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmBackendConfig {
    /// Full chat-completions URL, e.g. `https://api.openai.com/v1/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_max_output_tokens")]
    pub max_output_tokens: u32,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    /// Cap on concurrent requests through this backend.
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Used when a response carries no usage block.
    #[serde(default = "default_fallback_scheme")]
    pub fallback_scheme: TokenScheme,
}

fn default_max_output_tokens() -> u32 {
    512
}
fn default_api_key_env() -> String {
    "OPENAI_API_KEY".into()
}
fn default_timeout_secs() -> u64 {
    120
}
fn default_max_in_flight() -> usize {
    4
}
fn default_fallback_scheme() -> TokenScheme {
    TokenScheme::Whitespace
}

impl LlmBackendConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_output_tokens: default_max_output_tokens(),
            retry: RetryPolicy::default(),
            api_key_env: default_api_key_env(),
            timeout_secs: default_timeout_secs(),
            max_in_flight: default_max_in_flight(),
            fallback_scheme: default_fallback_scheme(),
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        reqwest::Url::parse(&self.endpoint_url).map_err(|e| format!("endpoint_url: {e}"))?;
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(format!("temperature must be >= 0, got {}", self.temperature));
        }
        if self.retry.attempts == 0 || self.retry.attempts > MAX_ATTEMPTS {
            return Err(format!("retry.attempts must be in 1..={MAX_ATTEMPTS}"));
        }
        if self.max_in_flight == 0 {
            return Err("max_in_flight must be at least 1".into());
        }
        if count_tokens("", self.fallback_scheme).is_none() {
            return Err("fallback_scheme must be countable locally".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub choices: Vec<ChatChoice>,
    #[serde(default)]
    pub usage: Option<Usage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatChoice {
    pub message: ChatMessage,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpBackend {
    config: LlmBackendConfig,
    client: reqwest::blocking::Client,
    gate: Gate,
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

impl HttpBackend {
    pub fn new(config: LlmBackendConfig) -> Result<Self, BackendError> {
        config.validate().map_err(|message| BackendError { backend: "http".into(), attempts: 0, message })?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| BackendError { backend: "http".into(), attempts: 0, message: e.to_string() })?;
        let gate = Gate { in_flight: Mutex::new(0), freed: Condvar::new(), cap: config.max_in_flight };
        Ok(Self { config, client, gate })
    }

    pub fn config(&self) -> &LlmBackendConfig {
        &self.config
    }

    pub fn build_request(&self, prompt: &str) -> ChatRequest {
        ChatRequest {
            model: self.config.model_name.clone(),
            messages: vec![ChatMessage { role: "user".into(), content: prompt.to_string() }],
            temperature: self.config.temperature,
            max_tokens: self.config.max_output_tokens,
        }
    }

    fn send_once(&self, body: &ChatRequest) -> Result<ChatResponse, Failure> {
        let _permit = self.gate.acquire();
        let mut req = self.client.post(&self.config.endpoint_url).json(body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            let msg = format!("endpoint returned HTTP {status}");
            return Err(if status.as_u16() == 429 || status.is_server_error() {
                Failure::Retryable(msg)
            } else {
                Failure::Fatal(msg)
            });
        }
        resp.json::<ChatResponse>().map_err(|e| Failure::Fatal(format!("malformed response: {}", e.without_url())))
    }

    /// Sends one chat request, retrying transient failures per the policy.
    pub fn complete(&self, prompt: &str) -> Result<(String, Option<Usage>), BackendError> {
        let body = self.build_request(prompt);
        let attempts = self.config.retry.attempts;
        let mut last = String::new();
        for attempt in 1..=attempts {
            if attempt > 1 {
                std::thread::sleep(self.config.retry.delay(attempt - 1));
            }
            match self.send_once(&body) {
                Ok(resp) => {
                    let content =
                        resp.choices.into_iter().next().map(|c| c.message.content).ok_or_else(|| BackendError {
                            backend: "http".into(),
                            attempts: attempt,
                            message: "response has no choices".into(),
                        })?;
                    debug!(attempt, "chat completion succeeded");
                    return Ok((content, resp.usage));
                }
                Err(Failure::Fatal(message)) => {
                    return Err(BackendError { backend: "http".into(), attempts: attempt, message })
                }
                Err(Failure::Retryable(message)) => {
                    warn!(attempt, %message, "chat completion failed");
                    last = message;
                }
            }
        }
        Err(BackendError { backend: "http".into(), attempts, message: last })
    }
}

impl Backend for HttpBackend {
    fn respond(&self, request: &TurnRequest<'_>) -> Result<AgentReply, BackendError> {
        let (content, usage) = self.complete(request.prompt)?;
        let (input_tokens, output_tokens) = match usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => {
                let count = |t: &str| count_tokens(t, self.config.fallback_scheme).expect("validated scheme");
                (count(request.prompt), count(&content))
            }
        };
        let mut reply = AgentReply { input_tokens, output_tokens, ..AgentReply::default() };
        match request.kind {
            TurnKind::Discussion => {
                reply.prediction = extract_prediction(&content, request.label_set);
                if request.addressing {
                    reply.addressees = parse_addressees(&content).flatten();
                }
            }
            TurnKind::Intent => reply.wants_to_speak = parse_intent(&content),
            _ => {}
        }
        reply.content = content;
        Ok(reply)
    }

    fn token_scheme(&self) -> TokenScheme {
        TokenScheme::ProviderReported
    }
}
