//! Scoring through a remote completions endpoint in echo mode.
//!
//! Request body (POST `{base_url}/completions`):
//!
//! ```json
//! {"model": "...", "prompt": "<prompt_prefix><prefix><completion>",
//!  "max_tokens": 0, "echo": true, "logprobs": true}
//! ```
//!
//! Response fields read: `choices[0].logprobs.tokens` (the prompt pieces) and
//! `choices[0].logprobs.token_logprobs` (one log-probability per piece,
//! `null` for the first piece of the prompt). `text_offset` is ignored;
//! boundaries are recovered by concatenating pieces, which must reproduce the
//! prompt exactly. The completion starts at the first piece boundary that
//! coincides with the end of `<prompt_prefix><prefix>`; a piece straddling
//! that boundary is a reconstruction error.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{LikelihoodError, LikelihoodProvider, LogBase, Result, RetryPolicy, ScoredSuffix, Tokenizer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL up to and including the API version, e.g. `http://localhost:8000/v1`.
    pub base_url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    /// Environment variable to read the API key from when `api_key` is unset.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    /// Text prepended to every prompt (e.g. a BOS marker) so that the first
    /// piece of the state also receives a log-probability.
    #[serde(default)]
    pub prompt_prefix: Option<String>,
}

fn default_timeout() -> u64 {
    60
}

#[derive(Debug, Serialize)]
struct EchoRequest<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    echo: bool,
    logprobs: bool,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EchoResponse {
    pub choices: Vec<EchoChoice>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EchoChoice {
    #[serde(default)]
    pub logprobs: Option<EchoLogprobs>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EchoLogprobs {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
}

impl EchoResponse {
    fn logprobs(&self) -> Result<&EchoLogprobs> {
        let lp = self
            .choices
            .first()
            .ok_or_else(|| LikelihoodError::MalformedResponse("no choices".into()))?
            .logprobs
            .as_ref()
            .ok_or_else(|| LikelihoodError::Capability("response carries no logprobs".into()))?;
        if lp.tokens.len() != lp.token_logprobs.len() {
            return Err(LikelihoodError::MalformedResponse(format!(
                "{} tokens but {} token_logprobs",
                lp.tokens.len(),
                lp.token_logprobs.len()
            )));
        }
        Ok(lp)
    }

    /// Pieces and log-probabilities of the text after byte offset `split` of
    /// `prompt`.
    pub fn split_at(&self, prompt: &str, split: usize) -> Result<(Vec<String>, Vec<Option<f64>>)> {
        let lp = self.logprobs()?;
        let joined: String = lp.tokens.concat();
        if joined != prompt {
            return Err(LikelihoodError::Reconstruction { expected: prompt.to_string(), got: joined });
        }
        let mut offset = 0;
        let mut start = None;
        for (k, piece) in lp.tokens.iter().enumerate() {
            if offset == split {
                start = Some(k);
                break;
            }
            if offset > split {
                break;
            }
            offset += piece.len();
        }
        if start.is_none() && offset == split {
            start = Some(lp.tokens.len());
        }
        let start = start.ok_or_else(|| LikelihoodError::Reconstruction {
            expected: prompt[split..].to_string(),
            got: format!("a piece straddles byte offset {split}"),
        })?;
        Ok((lp.tokens[start..].to_vec(), lp.token_logprobs[start..].to_vec()))
    }

    pub fn to_scored(&self, prompt: &str, split: usize) -> Result<ScoredSuffix> {
        let (pieces, logprobs) = self.split_at(prompt, split)?;
        let logprobs = logprobs
            .into_iter()
            .map(|v| {
                v.ok_or_else(|| {
                    LikelihoodError::Capability(
                        "completion piece has no log-probability (empty context); configure prompt_prefix"
                            .into(),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ScoredSuffix::from_logprobs(pieces, &logprobs, LogBase::Natural)
    }
}

/// Provider that scores through an echo-capable completions endpoint.
pub struct HttpProvider {
    name: String,
    config: HttpProviderConfig,
    api_key: Option<String>,
    client: reqwest::blocking::Client,
    retry: RetryPolicy,
}

enum CallError {
    Retryable(String),
    Fatal(LikelihoodError),
}

impl HttpProvider {
    /// Builds the provider and probes the endpoint once; endpoints that do
    /// not echo per-token logprobs are rejected here.
    pub fn connect(config: HttpProviderConfig, retry: RetryPolicy) -> Result<Self> {
        let provider = Self::without_probe(config, retry)?;
        let probe = "def main():\n    pass\n";
        let response = provider.request(probe)?;
        let lp = response.logprobs()?;
        if lp.tokens.len() < 2 || lp.token_logprobs.iter().skip(1).any(Option::is_none) {
            return Err(LikelihoodError::Capability(
                "endpoint does not echo per-token logprobs for the prompt".into(),
            ));
        }
        Ok(provider)
    }

    pub fn without_probe(config: HttpProviderConfig, retry: RetryPolicy) -> Result<Self> {
        let api_key = config
            .api_key
            .clone()
            .or_else(|| config.api_key_env.as_ref().and_then(|var| std::env::var(var).ok()));
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| LikelihoodError::Transport { attempts: 0, message: e.to_string() })?;
        Ok(Self { name: format!("http:{}", config.model), config, api_key, client, retry })
    }

    fn endpoint(&self) -> String {
        format!("{}/completions", self.config.base_url.trim_end_matches('/'))
    }

    fn call_once(&self, prompt: &str) -> std::result::Result<EchoResponse, CallError> {
        let body = EchoRequest {
            model: &self.config.model,
            prompt,
            max_tokens: 0,
            echo: true,
            logprobs: true,
        };
        let mut req = self.client.post(self.endpoint()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| CallError::Retryable(e.to_string()))?;
        let status = resp.status();
        if status.is_server_error() || status.as_u16() == 429 {
            return Err(CallError::Retryable(format!("status {status}")));
        }
        if !status.is_success() {
            let text = resp.text().unwrap_or_default();
            return Err(CallError::Fatal(LikelihoodError::Transport {
                attempts: 1,
                message: format!("status {status}: {text}"),
            }));
        }
        resp.json::<EchoResponse>()
            .map_err(|e| CallError::Fatal(LikelihoodError::MalformedResponse(e.to_string())))
    }

    fn request(&self, prompt: &str) -> Result<EchoResponse> {
        self.retry
            .run(|| self.call_once(prompt), |e| matches!(e, CallError::Retryable(_)))
            .map_err(|(e, attempts)| match e {
                CallError::Retryable(message) => LikelihoodError::Transport { attempts, message },
                CallError::Fatal(err) => err,
            })
    }

    fn lead(&self) -> &str {
        self.config.prompt_prefix.as_deref().unwrap_or("")
    }
}

impl Tokenizer for HttpProvider {
    fn tokenize(&self, text: &str) -> Result<Vec<String>> {
        if text.is_empty() {
            return Ok(Vec::new());
        }
        let prompt = format!("{}{}", self.lead(), text);
        let response = self.request(&prompt)?;
        Ok(response.split_at(&prompt, self.lead().len())?.0)
    }
}

impl LikelihoodProvider for HttpProvider {
    fn name(&self) -> &str {
        &self.name
    }

    fn score_raw(&self, prefix: &str, completion: &str) -> Result<ScoredSuffix> {
        let prompt = format!("{}{}{}", self.lead(), prefix, completion);
        let response = self.request(&prompt)?;
        response.to_scored(&prompt, self.lead().len() + prefix.len())
    }
}
