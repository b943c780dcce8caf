use std::path::Path;
use std::time::{Duration, Instant};

use log::{info, warn};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::usage::{Prices, UsageRecord};
use super::{LlmError, RenderedPrompt};

fn default_parallel() -> usize {
    4
}
fn default_timeout() -> f64 {
    120.0
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

/// Chat-completions provider settings, read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// Requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub price_prompt_per_million: f64,
    pub price_completion_per_million: f64,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff")]
    pub initial_backoff_ms: u64,
    /// Sent as `reasoning_effort` when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reasoning_effort: Option<String>,
}

impl ProviderConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LlmError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let config: Self = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&raw).map_err(|e| LlmError::Config(e.to_string()))?
        } else {
            toml::from_str(&raw).map_err(|e| LlmError::Config(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        let prices = [self.price_prompt_per_million, self.price_completion_per_million];
        if prices.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(LlmError::Config("prices must be finite and ≥ 0".into()));
        }
        if self.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be ≥ 1".into()));
        }
        if !self.timeout_secs.is_finite() || self.timeout_secs <= 0.0 {
            return Err(LlmError::Config("timeout_secs must be positive".into()));
        }
        Ok(())
    }

    pub fn prices(&self) -> Prices {
        Prices {
            prompt_per_million: self.price_prompt_per_million,
            completion_per_million: self.price_completion_per_million,
        }
    }

    pub fn effort(&self) -> &str {
        self.reasoning_effort.as_deref().unwrap_or("default")
    }

    pub fn endpoint(&self) -> String {
        let base = self.base_url.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

/// A successful completion.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub content: String,
    pub usage: UsageRecord,
    pub retries: u32,
}

/// Anything that turns a prompt into a completion.
pub trait ChatBackend: Sync {
    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, LlmError>;
}

/// Blocking chat-completions client with retry and exponential backoff.
pub struct ChatClient {
    config: ProviderConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

enum Attempt {
    Done(Completion),
    Transient(String),
}

impl ChatClient {
    pub fn new(config: ProviderConfig) -> Result<Self, LlmError> {
        config.validate()?;
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::MissingApiKey(config.api_key_env.clone()))?;
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| LlmError::Config(e.to_string()))?;
        Ok(Self { config, api_key, http })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.config
    }

    fn request_body(&self, prompt: &RenderedPrompt) -> Value {
        let mut body = json!({
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": prompt.system},
                {"role": "user", "content": prompt.user},
            ],
        });
        if let Some(effort) = &self.config.reasoning_effort {
            body["reasoning_effort"] = json!(effort);
        }
        body
    }

    fn attempt(&self, body: &Value, retries: u32) -> Result<Attempt, LlmError> {
        let started = Instant::now();
        let response = match self
            .http
            .post(self.config.endpoint())
            .bearer_auth(&self.api_key)
            .json(body)
            .send()
        {
            Ok(r) => r,
            Err(e) if e.is_timeout() || e.is_connect() || e.is_request() => {
                return Ok(Attempt::Transient(e.to_string()))
            }
            Err(e) => return Err(LlmError::Transport(e.to_string())),
        };
        let status = response.status();
        let text = response.text().map_err(|e| LlmError::Transport(e.to_string()));
        let seconds = started.elapsed().as_secs_f64();
        if status.as_u16() == 429 || status.is_server_error() {
            return Ok(Attempt::Transient(format!("HTTP {status}")));
        }
        let text = match text {
            Ok(t) => t,
            Err(LlmError::Transport(e)) => return Ok(Attempt::Transient(e)),
            Err(e) => return Err(e),
        };
        if !status.is_success() {
            return Err(LlmError::Http {
                status: status.as_u16(),
                body: text,
            });
        }
        let value: Value = serde_json::from_str(&text).map_err(|e| LlmError::ResponseFormat(e.to_string()))?;
        let content = value["choices"][0]["message"]["content"]
            .as_str()
            .ok_or_else(|| LlmError::ResponseFormat("missing choices[0].message.content".into()))?
            .to_string();
        let prompt_tokens = value["usage"]["prompt_tokens"].as_u64();
        let completion_tokens = value["usage"]["completion_tokens"].as_u64();
        let usage = match (prompt_tokens, completion_tokens) {
            (Some(p), Some(c)) => UsageRecord::new(
                &self.config.model,
                self.config.effort(),
                seconds,
                p,
                c,
                self.config.prices(),
            ),
            _ => {
                warn!("response carries no usage block; recording zero tokens");
                let mut r = UsageRecord::new(
                    &self.config.model,
                    self.config.effort(),
                    seconds,
                    0,
                    0,
                    self.config.prices(),
                );
                r.usage_missing = true;
                r
            }
        };
        Ok(Attempt::Done(Completion {
            content,
            usage,
            retries,
        }))
    }
}

impl ChatBackend for ChatClient {
    /// Retries 429, 5xx, timeouts and connection failures up to `max_retries`
    /// times, sleeping `initial_backoff_ms · 2^n` between attempts. The usage
    /// record times the successful attempt only.
    fn complete(&self, prompt: &RenderedPrompt) -> Result<Completion, LlmError> {
        let body = self.request_body(prompt);
        let mut last = String::new();
        for retry in 0..=self.config.max_retries {
            if retry > 0 {
                let delay = self.config.initial_backoff_ms.saturating_mul(1 << (retry - 1).min(16));
                info!("retry {retry}/{} in {delay} ms after: {last}", self.config.max_retries);
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.attempt(&body, retry)? {
                Attempt::Done(c) => return Ok(c),
                Attempt::Transient(reason) => last = reason,
            }
        }
        Err(LlmError::Exhausted {
            attempts: self.config.max_retries + 1,
            last,
        })
    }
}
