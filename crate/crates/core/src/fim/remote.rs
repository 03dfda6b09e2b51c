//! HTTP inference backend.
//!
//! Request: `{"prompt", "ground_truth", "stop", "max_new_tokens", "temperature": 0}`.
//! Reply: `{"generated", "token_losses", "truncated"}` or `{"error", "message"}`.
//! The server owns tokenization and returns one loss per ground-truth token.

use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::backend::{truncate_at_stop, Backend, BackendError, ModelJudgment};
use super::prompt::FimPrompt;

pub const CONTEXT_OVERFLOW_CODE: &str = "context_overflow";

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct JudgeRequest {
    pub prompt: String,
    pub ground_truth: String,
    pub stop: Vec<String>,
    pub max_new_tokens: u32,
    pub temperature: u8,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct JudgeReply {
    pub generated: String,
    pub token_losses: Vec<f64>,
    pub truncated: bool,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct ErrorReply {
    pub error: String,
    #[serde(default)]
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct RemoteBackend {
    agent: ureq::Agent,
    url: String,
    stop: Vec<String>,
    max_new_tokens: u32,
    retries: u32,
    backoff: Duration,
}

enum Attempt {
    Done(Result<ModelJudgment, BackendError>),
    Transient(String),
}

impl RemoteBackend {
    pub fn new(url: impl Into<String>, stop: Vec<String>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(300)))
            .build()
            .into();
        RemoteBackend {
            agent,
            url: url.into(),
            stop,
            max_new_tokens: 128,
            retries: 1,
            backoff: Duration::from_millis(250),
        }
    }

    pub fn with_max_new_tokens(mut self, n: u32) -> Self {
        self.max_new_tokens = n;
        self
    }

    /// Number of retries after a transport failure and the first backoff
    /// delay; the delay doubles per retry.
    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn attempt(&self, request: &JudgeRequest) -> Attempt {
        let mut response = match self.agent.post(&self.url).send_json(request) {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(e.to_string()),
        };
        let status = response.status().as_u16();
        let body = match response.body_mut().read_to_string() {
            Ok(b) => b,
            Err(e) => {
                return Attempt::Done(Err(BackendError::MalformedReply(format!(
                    "unreadable body (status {status}): {e}"
                ))))
            }
        };
        if let Ok(err) = serde_json::from_str::<ErrorReply>(&body) {
            if err.error == CONTEXT_OVERFLOW_CODE {
                return Attempt::Done(Err(BackendError::ContextOverflow(err.message)));
            }
            let msg = format!("{} (status {status}): {}", err.error, err.message);
            return if status >= 500 {
                Attempt::Transient(msg)
            } else {
                Attempt::Done(Err(BackendError::Unavailable(msg)))
            };
        }
        if status >= 500 {
            return Attempt::Transient(format!("status {status}"));
        }
        if !(200..300).contains(&status) {
            return Attempt::Done(Err(BackendError::Unavailable(format!("status {status}"))));
        }
        let reply: JudgeReply = match serde_json::from_str(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Done(Err(BackendError::MalformedReply(e.to_string()))),
        };
        let generated = truncate_at_stop(&reply.generated, &self.stop);
        Attempt::Done(Ok(ModelJudgment {
            truncated: reply.truncated || generated.len() != reply.generated.len(),
            generated: generated.to_owned(),
            token_losses: reply.token_losses,
            backend_id: self.id(),
            context_shrinks: 0,
        }))
    }
}

impl Backend for RemoteBackend {
    fn id(&self) -> String {
        format!("remote:{}", self.url)
    }

    fn judge(&self, prompt: &FimPrompt) -> Result<ModelJudgment, BackendError> {
        let request = JudgeRequest {
            prompt: prompt.body.clone(),
            ground_truth: prompt.ground_truth.clone(),
            stop: self.stop.clone(),
            max_new_tokens: self.max_new_tokens,
            temperature: 0,
        };
        let mut delay = self.backoff;
        let mut attempt = 0;
        loop {
            match self.attempt(&request) {
                Attempt::Done(result) => return result,
                Attempt::Transient(msg) if attempt >= self.retries => {
                    return Err(BackendError::Unavailable(format!(
                        "{} after {} attempt(s): {msg}",
                        self.url,
                        attempt + 1
                    )))
                }
                Attempt::Transient(_) => {
                    thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
            }
        }
    }
}
