//! In-process stub of a chat-completions endpoint. Used by the test suites
//! and handy for offline smoke runs: it binds a real TCP port, speaks just
//! enough HTTP, and answers from a configurable responder.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

/// What the stub sends back for one request.
pub enum StubReply {
    /// Normal completion whose message content is this text.
    Text(String),
    /// Bare HTTP status with an empty JSON body.
    Status(u16),
    /// Verbatim JSON body with status 200.
    Raw(String),
}

type Responder = dyn Fn(&str, &serde_json::Value) -> StubReply + Send + Sync;

/// Configurable behavior: a responder over (last user text, full body),
/// optional initial failures, optional per-request delay.
pub struct ServerBehavior {
    responder: Arc<Responder>,
    initial_failures: u32,
    failure_status: u16,
    delay: Duration,
}

impl ServerBehavior {
    pub fn with_responder<F>(f: F) -> Self
    where
        F: Fn(&str, &serde_json::Value) -> StubReply + Send + Sync + 'static,
    {
        ServerBehavior {
            responder: Arc::new(f),
            initial_failures: 0,
            failure_status: 500,
            delay: Duration::ZERO,
        }
    }

    /// Always replies with the same text.
    pub fn fixed(text: impl Into<String>) -> Self {
        let text = text.into();
        Self::with_responder(move |_, _| StubReply::Text(text.clone()))
    }

    /// Replies with the last user message's text.
    pub fn echo_prompt() -> Self {
        Self::with_responder(|prompt, _| StubReply::Text(prompt.to_string()))
    }

    /// Replies with this body verbatim (status 200).
    pub fn raw_json(body: impl Into<String>) -> Self {
        let body = body.into();
        Self::with_responder(move |_, _| StubReply::Raw(body.clone()))
    }

    /// Returns HTTP 400 when the prompt contains the needle.
    pub fn fail_when_prompt_contains(needle: impl Into<String>) -> Self {
        let needle = needle.into();
        Self::with_responder(move |prompt, _| {
            if prompt.contains(&needle) {
                StubReply::Status(400)
            } else {
                StubReply::Text("ok".to_string())
            }
        })
    }

    /// The first `n` requests fail with `status` before normal behavior
    /// resumes.
    pub fn with_initial_failures(mut self, n: u32, status: u16) -> Self {
        self.initial_failures = n;
        self.failure_status = status;
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.delay = delay;
        self
    }
}

/// Handle to a running stub server; shuts down on drop.
pub struct StubServer {
    addr: String,
    stop: Arc<AtomicBool>,
    accept_thread: Option<std::thread::JoinHandle<()>>,
    current: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
    received: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start(behavior: ServerBehavior) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").expect("bind stub server");
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let stop = Arc::new(AtomicBool::new(false));
        let current = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let received = Arc::new(AtomicUsize::new(0));
        let remaining_failures = Arc::new(AtomicU32::new(behavior.initial_failures));

        let accept_thread = {
            let stop = stop.clone();
            let current = current.clone();
            let peak = peak.clone();
            let received = received.clone();
            let responder = behavior.responder.clone();
            let failure_status = behavior.failure_status;
            let delay = behavior.delay;
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let Ok(stream) = stream else { continue };
                    let responder = responder.clone();
                    let current = current.clone();
                    let peak = peak.clone();
                    let received = received.clone();
                    let remaining_failures = remaining_failures.clone();
                    std::thread::spawn(move || {
                        handle_connection(
                            stream,
                            &responder,
                            &remaining_failures,
                            failure_status,
                            delay,
                            &current,
                            &peak,
                            &received,
                        );
                    });
                }
            })
        };

        StubServer {
            addr,
            stop,
            accept_thread: Some(accept_thread),
            current,
            peak,
            received,
        }
    }

    /// Base URL, e.g. `http://127.0.0.1:PORT`.
    pub fn endpoint(&self) -> String {
        self.addr.clone()
    }

    /// Highest number of simultaneously in-flight requests observed.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn requests_received(&self) -> usize {
        self.received.load(Ordering::SeqCst)
    }

    // current gauge is only read through peak
    #[allow(dead_code)]
    fn in_flight(&self) -> usize {
        self.current.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr.trim_start_matches("http://"));
        if let Some(handle) = self.accept_thread.take() {
            let _ = handle.join();
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn handle_connection(
    mut stream: TcpStream,
    responder: &Arc<Responder>,
    remaining_failures: &AtomicU32,
    failure_status: u16,
    delay: Duration,
    current: &AtomicUsize,
    peak: &AtomicUsize,
    received: &AtomicUsize,
) {
    let Some(body) = read_http_body(&mut stream) else {
        return;
    };
    received.fetch_add(1, Ordering::SeqCst);
    let now = current.fetch_add(1, Ordering::SeqCst) + 1;
    peak.fetch_max(now, Ordering::SeqCst);
    if !delay.is_zero() {
        std::thread::sleep(delay);
    }

    let reply = if remaining_failures
        .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
        .is_ok()
    {
        StubReply::Status(failure_status)
    } else {
        let value: serde_json::Value = serde_json::from_str(&body).unwrap_or_default();
        let prompt = last_user_text(&value);
        responder(&prompt, &value)
    };

    let (status, body) = match reply {
        StubReply::Text(text) => (200u16, completion_body(&text)),
        StubReply::Raw(raw) => (200, raw),
        StubReply::Status(code) => (code, "{}".to_string()),
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let response = format!(
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    );
    let _ = stream.write_all(response.as_bytes());
    current.fetch_sub(1, Ordering::SeqCst);
}

/// Minimal HTTP request reader: headers, then Content-Length body bytes.
fn read_http_body(stream: &mut TcpStream) -> Option<String> {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(10)));
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let header_end = loop {
        if let Some(pos) = find_header_end(&buf) {
            break pos;
        }
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            return None;
        }
        buf.extend_from_slice(&chunk[..n]);
    };
    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
    let content_length: usize = headers
        .lines()
        .find_map(|l| {
            let (name, value) = l.split_once(':')?;
            name.eq_ignore_ascii_case("content-length")
                .then(|| value.trim().parse().ok())?
        })
        .unwrap_or(0);
    let body_start = header_end + 4;
    while buf.len() < body_start + content_length {
        let n = stream.read(&mut chunk).ok()?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    Some(String::from_utf8_lossy(&buf[body_start..body_start + content_length.min(buf.len().saturating_sub(body_start))]).to_string())
}

fn find_header_end(buf: &[u8]) -> Option<usize> {
    buf.windows(4).position(|w| w == b"\r\n\r\n")
}

/// Text of the last user message; array content joins its text parts.
pub fn last_user_text(body: &serde_json::Value) -> String {
    let Some(messages) = body.get("messages").and_then(|m| m.as_array()) else {
        return String::new();
    };
    for message in messages.iter().rev() {
        if message.get("role").and_then(|r| r.as_str()) != Some("user") {
            continue;
        }
        match message.get("content") {
            Some(serde_json::Value::String(s)) => return s.clone(),
            Some(serde_json::Value::Array(parts)) => {
                return parts
                    .iter()
                    .filter_map(|p| p.get("text").and_then(|t| t.as_str()))
                    .collect::<Vec<_>>()
                    .join("\n");
            }
            _ => return String::new(),
        }
    }
    String::new()
}

fn completion_body(text: &str) -> String {
    serde_json::json!({
        "id": "stub",
        "object": "chat.completion",
        "choices": [{
            "index": 0,
            "message": {"role": "assistant", "content": text},
            "finish_reason": "stop"
        }],
        "usage": {"prompt_tokens": 1, "completion_tokens": 1}
    })
    .to_string()
}
