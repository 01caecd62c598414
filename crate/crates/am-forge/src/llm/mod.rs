//! Retrying, concurrency-bounded client for OpenAI-compatible
//! chat-completions endpoints, with text and image message parts.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine;
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

/// Env var carrying the bearer token; the key travels only in the
/// Authorization header, never in a request body.
pub const API_KEY_ENV: &str = "AM_FORGE_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image { bytes: Vec<u8>, media_type: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub role: Role,
    pub parts: Vec<Part>,
}

impl Message {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Message {
            role,
            parts: vec![Part::Text(text.into())],
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChatRequest {
    pub endpoint: String,
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
    pub timeout: Duration,
}

impl ChatRequest {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        ChatRequest {
            endpoint: endpoint.into(),
            model: model.into(),
            messages: Vec::new(),
            temperature: 0.0,
            max_tokens: 1024,
            timeout: Duration::from_secs(120),
        }
    }

    pub fn user_text(mut self, text: impl Into<String>) -> Self {
        self.messages.push(Message::text(Role::User, text));
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: Option<u64>,
    pub completion_tokens: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Option<Usage>,
    pub latency: Duration,
    /// Number of HTTP attempts spent obtaining this response.
    pub attempts: u32,
}

/// Exponential backoff with full jitter.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 5,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(30),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based), pre-jitter values are
    /// non-decreasing in `attempt`.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(2u32.saturating_pow(attempt.saturating_sub(1)));
        let capped = exp.min(self.max_delay);
        if self.jitter {
            let frac: f64 = rand::thread_rng().gen_range(0.0..=1.0);
            capped.mul_f64(frac)
        } else {
            capped
        }
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("retries exhausted after {attempts} attempts (last status {last_status:?})")]
    Exhausted {
        attempts: u32,
        last_status: Option<u16>,
    },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
}

/// Shareable blocking client.
pub struct ChatClient {
    http: reqwest::blocking::Client,
    api_key: Option<String>,
    requests_sent: AtomicUsize,
}

impl Default for ChatClient {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatClient {
    pub fn new() -> Self {
        ChatClient {
            http: reqwest::blocking::Client::new(),
            api_key: std::env::var(API_KEY_ENV).ok(),
            requests_sent: AtomicUsize::new(0),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    pub fn requests_sent(&self) -> usize {
        self.requests_sent.load(Ordering::Relaxed)
    }

    /// Serializes one message to the chat-completions wire shape. Image
    /// parts become base64 data-URI entries.
    fn message_json(message: &Message) -> serde_json::Value {
        let role = match message.role {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        };
        let only_text = message
            .parts
            .iter()
            .all(|p| matches!(p, Part::Text(_)));
        if only_text && message.parts.len() == 1 {
            if let Part::Text(t) = &message.parts[0] {
                return json!({"role": role, "content": t});
            }
        }
        let content: Vec<serde_json::Value> = message
            .parts
            .iter()
            .map(|part| match part {
                Part::Text(t) => json!({"type": "text", "text": t}),
                Part::Image { bytes, media_type } => {
                    let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
                    json!({
                        "type": "image_url",
                        "image_url": {"url": format!("data:{media_type};base64,{b64}")}
                    })
                }
            })
            .collect();
        json!({"role": role, "content": content})
    }

    pub fn request_body(request: &ChatRequest) -> serde_json::Value {
        json!({
            "model": request.model,
            "messages": request.messages.iter().map(Self::message_json).collect::<Vec<_>>(),
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        })
    }

    /// POSTs the request, retrying on HTTP 429/5xx and transport errors
    /// with exponential backoff plus jitter.
    pub fn complete(
        &self,
        request: &ChatRequest,
        retry: &RetryPolicy,
    ) -> Result<ChatResponse, ClientError> {
        let url = format!(
            "{}/v1/chat/completions",
            request.endpoint.trim_end_matches('/')
        );
        let body = Self::request_body(request);
        let start = Instant::now();
        let mut last_status: Option<u16> = None;

        for attempt in 1..=retry.max_attempts.max(1) {
            if attempt > 1 {
                std::thread::sleep(retry.delay(attempt - 1));
            }
            self.requests_sent.fetch_add(1, Ordering::Relaxed);
            let mut builder = self
                .http
                .post(&url)
                .timeout(request.timeout)
                .json(&body);
            if let Some(key) = &self.api_key {
                builder = builder.bearer_auth(key);
            }
            match builder.send() {
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    last_status = Some(status);
                    if status == 429 || status >= 500 {
                        continue;
                    }
                    if !(200..300).contains(&status) {
                        return Err(ClientError::Exhausted {
                            attempts: attempt,
                            last_status,
                        });
                    }
                    let value: serde_json::Value = resp
                        .json()
                        .map_err(|e| ClientError::MalformedResponse(e.to_string()))?;
                    let mut parsed = parse_completion(&value)?;
                    parsed.latency = start.elapsed();
                    parsed.attempts = attempt;
                    return Ok(parsed);
                }
                Err(e) if e.is_timeout() => return Err(ClientError::Timeout),
                Err(_) => continue,
            }
        }
        Err(ClientError::Exhausted {
            attempts: retry.max_attempts,
            last_status,
        })
    }

    /// Runs `requests` with at most `max_in_flight` concurrently
    /// outstanding. Results preserve input order; one failure never aborts
    /// the batch.
    pub fn complete_batch(
        &self,
        requests: &[ChatRequest],
        retry: &RetryPolicy,
        max_in_flight: usize,
    ) -> Vec<Result<ChatResponse, ClientError>> {
        assert!(max_in_flight >= 1, "max_in_flight must be at least 1");
        if requests.is_empty() {
            return Vec::new();
        }
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<ChatResponse, ClientError>>>> =
            Mutex::new((0..requests.len()).map(|_| None).collect());

        std::thread::scope(|scope| {
            for _ in 0..max_in_flight.min(requests.len()) {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= requests.len() {
                        break;
                    }
                    let result = self.complete(&requests[i], retry);
                    results.lock().unwrap()[i] = Some(result);
                });
            }
        });

        results
            .into_inner()
            .unwrap()
            .into_iter()
            .map(|r| r.expect("every slot filled"))
            .collect()
    }
}

fn parse_completion(value: &serde_json::Value) -> Result<ChatResponse, ClientError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| ClientError::MalformedResponse("missing choices".into()))?;
    let text = choice
        .get("message")
        .and_then(|m| m.get("content"))
        .and_then(|c| c.as_str())
        .ok_or_else(|| ClientError::MalformedResponse("missing message content".into()))?
        .to_string();
    let finish_reason = match choice.get("finish_reason").and_then(|f| f.as_str()) {
        Some("stop") | None => FinishReason::Stop,
        Some("length") => FinishReason::Length,
        Some(_) => FinishReason::Error,
    };
    let usage = value.get("usage").map(|u| Usage {
        prompt_tokens: u.get("prompt_tokens").and_then(|v| v.as_u64()),
        completion_tokens: u.get("completion_tokens").and_then(|v| v.as_u64()),
    });
    Ok(ChatResponse {
        text,
        finish_reason,
        usage,
        latency: Duration::ZERO,
        attempts: 1,
    })
}
