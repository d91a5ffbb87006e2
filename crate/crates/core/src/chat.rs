//! Chat-completion backends used by LLM-driven simulated humans and assistants.

use std::collections::VecDeque;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::likelihood::RetryPolicy;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: "system".into(), content: content.into() }
    }
    pub fn user(content: impl Into<String>) -> Self {
        Self { role: "user".into(), content: content.into() }
    }
    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: content.into() }
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("chat transport failure after {attempts} attempts: {message}")]
    Transport { attempts: u32, message: String },
    #[error("chat response malformed: {0}")]
    Malformed(String),
    #[error("scripted chat exhausted")]
    Exhausted,
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, messages: &[ChatMessage], max_tokens: Option<u32>) -> Result<String, ChatError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatEndpointConfig {
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

/// `POST {base_url}/chat/completions` with `{model, messages, max_tokens?, temperature?}`;
/// reads `choices[0].message.content`.
pub struct HttpChatBackend {
    config: ChatEndpointConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

impl HttpChatBackend {
    pub fn new(config: ChatEndpointConfig, retry: RetryPolicy) -> Result<Self, ChatError> {
        let api_key = config
            .api_key
            .clone()
            .or_else(|| config.api_key_env.as_ref().and_then(|v| std::env::var(v).ok()));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ChatError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { config, api_key, client, retry })
    }

    fn once(&self, messages: &[ChatMessage], max_tokens: Option<u32>) -> Result<String, (bool, ChatError)> {
        let body = ChatRequest {
            model: &self.config.model,
            messages,
            max_tokens,
            temperature: self.config.temperature,
        };
        let url = format!("{}/chat/completions", self.config.base_url.trim_end_matches('/'));
        let mut req = self.client.post(url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req
            .send()
            .map_err(|e| (true, ChatError::Transport { attempts: 1, message: e.to_string() }))?;
        let status = resp.status();
        if !status.is_success() {
            let retry = status.is_server_error() || status.as_u16() == 429;
            return Err((retry, ChatError::Transport { attempts: 1, message: format!("status {status}") }));
        }
        let parsed: ChatResponse = resp.json().map_err(|e| (false, ChatError::Malformed(e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| (false, ChatError::Malformed("no choices".into())))
    }
}

impl ChatBackend for HttpChatBackend {
    fn complete(&self, messages: &[ChatMessage], max_tokens: Option<u32>) -> Result<String, ChatError> {
        self.retry
            .run(|| self.once(messages, max_tokens), |(retry, _)| *retry)
            .map_err(|((_, e), attempts)| match e {
                ChatError::Transport { message, .. } => ChatError::Transport { attempts, message },
                other => other,
            })
    }
}

/// Replays canned replies in order and records every request.
#[derive(Default)]
pub struct ScriptedChat {
    replies: Mutex<VecDeque<Result<String, String>>>,
    requests: Mutex<Vec<Vec<ChatMessage>>>,
}

impl ScriptedChat {
    pub fn new<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            replies: Mutex::new(replies.into_iter().map(|s| Ok(s.into())).collect()),
            requests: Mutex::default(),
        }
    }

    /// Queues a transport failure.
    pub fn push_failure(&self, message: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Err(message.into()));
    }

    pub fn push_reply(&self, reply: impl Into<String>) {
        self.replies.lock().unwrap().push_back(Ok(reply.into()));
    }

    pub fn requests(&self) -> Vec<Vec<ChatMessage>> {
        self.requests.lock().unwrap().clone()
    }
}

impl ChatBackend for ScriptedChat {
    fn complete(&self, messages: &[ChatMessage], _max_tokens: Option<u32>) -> Result<String, ChatError> {
        self.requests.lock().unwrap().push(messages.to_vec());
        match self.replies.lock().unwrap().pop_front() {
            Some(Ok(s)) => Ok(s),
            Some(Err(message)) => Err(ChatError::Transport { attempts: 1, message }),
            None => Err(ChatError::Exhausted),
        }
    }
}
