//! OpenAI-compatible chat-completions client with retry, backoff, a rolling
//! request-rate limit and a bound on concurrent requests.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::Deserialize;
use serde_json::json;

use super::{BackendDescriptor, BackendKind, GenerationParams, TextGenerator};
use crate::{Error, Result};

pub const API_KEY_ENV: &str = "CONVSDG_API_KEY";

const MAX_BACKOFF: Duration = Duration::from_secs(30);

/// Sliding-window limiter: at most `max_requests` acquisitions in any window.
#[derive(Debug)]
pub struct RateLimiter {
    max_requests: usize,
    window: Duration,
    issued: Mutex<VecDeque<Instant>>,
}

impl RateLimiter {
    pub fn new(max_requests: u32, window: Duration) -> Self {
        Self {
            max_requests: max_requests.max(1) as usize,
            window,
            issued: Mutex::new(VecDeque::new()),
        }
    }

    pub fn per_minute(max_requests: u32) -> Self {
        Self::new(max_requests, Duration::from_secs(60))
    }

    /// Blocks until a request slot is free and records it.
    pub fn acquire(&self) {
        loop {
            let wait = {
                let mut issued = self.issued.lock().expect("rate limiter poisoned");
                let now = Instant::now();
                while issued
                    .front()
                    .is_some_and(|&t| now.duration_since(t) >= self.window)
                {
                    issued.pop_front();
                }
                if issued.len() < self.max_requests {
                    issued.push_back(now);
                    return;
                }
                self.window - now.duration_since(issued[0])
            };
            thread::sleep(wait);
        }
    }
}

/// Counting semaphore for in-flight requests.
#[derive(Debug)]
struct InFlight {
    limit: usize,
    count: Mutex<usize>,
    freed: Condvar,
}

struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            count: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    fn enter(&self) -> InFlightGuard<'_> {
        let mut count = self.count.lock().expect("in-flight poisoned");
        while *count >= self.limit {
            count = self.freed.wait(count).expect("in-flight poisoned");
        }
        *count += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut count = self.0.count.lock().expect("in-flight poisoned");
        *count -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

enum Attempt {
    Done(String),
    Transient { status: Option<u16>, message: String },
    Fatal { status: Option<u16>, message: String },
}

pub struct HttpChatBackend {
    descriptor: BackendDescriptor,
    endpoint: String,
    api_key: String,
    agent: ureq::Agent,
    limiter: RateLimiter,
    in_flight: InFlight,
}

impl std::fmt::Debug for HttpChatBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpChatBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.descriptor.model_name)
            .finish_non_exhaustive()
    }
}

impl HttpChatBackend {
    pub fn from_env(descriptor: BackendDescriptor) -> Result<Self> {
        let key = std::env::var(API_KEY_ENV)
            .map_err(|_| Error::Config(format!("http_chat backend needs {API_KEY_ENV} to be set")))?;
        Self::new(descriptor, key)
    }

    pub fn new(descriptor: BackendDescriptor, api_key: impl Into<String>) -> Result<Self> {
        if descriptor.kind != BackendKind::HttpChat {
            return Err(Error::Config("descriptor kind is not http_chat".into()));
        }
        let endpoint = descriptor
            .endpoint
            .clone()
            .filter(|e| !e.is_empty())
            .ok_or_else(|| Error::Config("http_chat backend needs an endpoint".into()))?;
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(descriptor.timeout_secs.max(1))))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            limiter: RateLimiter::per_minute(descriptor.rate_limit),
            in_flight: InFlight::new(descriptor.max_in_flight),
            descriptor,
            endpoint,
            api_key: api_key.into(),
            agent,
        })
    }

    /// Replaces the default per-minute limiter.
    pub fn with_rate_limiter(mut self, limiter: RateLimiter) -> Self {
        self.limiter = limiter;
        self
    }

    fn attempt(&self, prompt: &str, params: &GenerationParams) -> Attempt {
        let mut body = json!({
            "model": self.descriptor.model_name,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_output_tokens,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let response = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(&body);
        let mut response = match response {
            Ok(r) => r,
            Err(e @ (ureq::Error::Io(_) | ureq::Error::Timeout(_) | ureq::Error::ConnectionFailed | ureq::Error::HostNotFound)) => {
                return Attempt::Transient { status: None, message: e.to_string() }
            }
            Err(e) => return Attempt::Fatal { status: None, message: e.to_string() },
        };
        let status = response.status().as_u16();
        if status == 429 || (500..600).contains(&status) {
            return Attempt::Transient {
                status: Some(status),
                message: format!("HTTP {status}"),
            };
        }
        if !(200..300).contains(&status) {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            return Attempt::Fatal {
                status: Some(status),
                message: format!("HTTP {status}: {}", text.chars().take(200).collect::<String>()),
            };
        }
        match response.body_mut().read_json::<ChatResponse>() {
            Ok(parsed) => Attempt::Done(
                parsed
                    .choices
                    .into_iter()
                    .next()
                    .and_then(|c| c.message.content)
                    .unwrap_or_default(),
            ),
            Err(e) => Attempt::Fatal {
                status: Some(status),
                message: format!("malformed response body: {e}"),
            },
        }
    }
}

impl TextGenerator for HttpChatBackend {
    fn complete(&self, prompt: &str, params: &GenerationParams) -> Result<String> {
        let _slot = self.in_flight.enter();
        let mut backoff = Duration::from_millis(self.descriptor.initial_backoff_ms);
        let mut attempts = 0;
        loop {
            self.limiter.acquire();
            attempts += 1;
            match self.attempt(prompt, params) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal { status, message } => {
                    return Err(Error::Transport { attempts, status, message })
                }
                Attempt::Transient { status, message } => {
                    if attempts > self.descriptor.max_retries {
                        return Err(Error::Transport { attempts, status, message });
                    }
                    log::warn!("chat request failed ({message}); retry {attempts} in {backoff:?}");
                    thread::sleep(backoff);
                    backoff = (backoff * 2).min(MAX_BACKOFF);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn limiter_blocks_past_capacity() {
        let limiter = RateLimiter::new(2, Duration::from_millis(150));
        let start = Instant::now();
        limiter.acquire();
        limiter.acquire();
        assert!(start.elapsed() < Duration::from_millis(100));
        limiter.acquire();
        assert!(start.elapsed() >= Duration::from_millis(150));
    }

    #[test]
    fn http_needs_endpoint() {
        let d = BackendDescriptor { kind: BackendKind::HttpChat, ..Default::default() };
        assert!(HttpChatBackend::new(d, "k").is_err());
    }
}
