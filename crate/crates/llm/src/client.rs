//! Blocking client for chat-completion and embedding endpoints.

use std::fmt;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use tracing::{debug, warn};

use crate::config::LlmEndpointConfig;
use crate::error::{LlmError, Result};

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
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingRequest {
    pub model: String,
    pub input: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatReply,
}

#[derive(Deserialize)]
struct ChatReply {
    content: Option<String>,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Holds the secret; never printed.
#[derive(Clone)]
struct ApiKey(String);

impl fmt::Debug for ApiKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("ApiKey(<redacted>)")
    }
}

const EXCERPT_CHARS: usize = 300;
const MAX_BACKOFF: Duration = Duration::from_secs(30);

#[derive(Debug)]
pub struct LlmClient {
    config: LlmEndpointConfig,
    key: ApiKey,
    agent: ureq::Agent,
    dimension: Mutex<Option<usize>>,
}

impl LlmClient {
    pub fn new(config: LlmEndpointConfig, api_key: impl Into<String>) -> Result<Self> {
        config.validate()?;
        let key = api_key.into();
        if key.trim().is_empty() {
            return Err(LlmError::MissingKey {
                var: config.api_key_env.clone(),
            });
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(config.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self {
            config,
            key: ApiKey(key),
            agent,
            dimension: Mutex::new(None),
        })
    }

    /// Reads the key from the environment variable named in the config.
    pub fn from_env(config: LlmEndpointConfig) -> Result<Self> {
        match std::env::var(&config.api_key_env) {
            Ok(key) if !key.trim().is_empty() => Self::new(config, key),
            _ => Err(LlmError::MissingKey {
                var: config.api_key_env.clone(),
            }),
        }
    }

    pub fn config(&self) -> &LlmEndpointConfig {
        &self.config
    }

    /// Embedding length locked in by the first successful embedding call.
    pub fn dimension(&self) -> Option<usize> {
        *self.dimension.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn redact(&self, text: &str) -> String {
        text.replace(&self.key.0, "<redacted>")
    }

    fn excerpt(&self, text: &str) -> String {
        let t: String = text.chars().take(EXCERPT_CHARS).collect();
        self.redact(&t)
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let ms = self.config.backoff_base_ms.saturating_mul(1u64 << attempt.min(20));
        Duration::from_millis(ms).min(MAX_BACKOFF)
    }

    fn post_once<T: Serialize>(&self, url: &str, body: &T) -> Result<String> {
        let response = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.key.0))
            .send_json(body);
        let mut response = response.map_err(|e| LlmError::Transport {
            status: None,
            message: self.redact(&e.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response.body_mut().read_to_string().map_err(|e| LlmError::Transport {
            status: Some(status),
            message: self.redact(&e.to_string()),
        })?;
        if !(200..300).contains(&status) {
            return Err(LlmError::Transport {
                status: Some(status),
                message: self.excerpt(&text),
            });
        }
        Ok(text)
    }

    /// POSTs a JSON body, retrying transient failures up to `max_retries`
    /// times with exponential backoff.
    fn post<T: Serialize>(&self, path: &str, body: &T) -> Result<String> {
        let url = self.config.endpoint(path);
        if tracing::enabled!(tracing::Level::DEBUG) {
            let json = serde_json::to_string(body).unwrap_or_default();
            debug!(url = %url, body = %self.redact(&json), "llm request");
        }
        let mut attempt = 0u32;
        loop {
            match self.post_once(&url, body) {
                Ok(text) => {
                    debug!(url = %url, body = %self.excerpt(&text), "llm response");
                    return Ok(text);
                }
                Err(e) if e.is_transient() && attempt < self.config.max_retries => {
                    let wait = self.backoff(attempt);
                    warn!(url = %url, attempt = attempt + 1, error = %e, "transient failure, retrying in {wait:?}");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Sends one chat-completion request and returns the first choice's text.
    pub fn chat_complete(&self, messages: &[ChatMessage]) -> Result<String> {
        if messages.is_empty() {
            return Err(LlmError::InvalidInput("no messages".into()));
        }
        if let Some(m) = messages
            .iter()
            .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
        {
            return Err(LlmError::InvalidInput(format!("{:?} message has empty content", m.role)));
        }
        let request = ChatRequest {
            model: self.config.model.clone(),
            messages: messages.to_vec(),
            temperature: self.config.temperature,
        };
        let text = self.post("chat/completions", &request)?;
        let parsed: ChatResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::Parse(self.redact(&e.to_string())))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Parse("response has no choices[0].message.content".into()))
    }

    /// Returns the provider's embedding unchanged. The first call fixes the
    /// dimension; later calls with a different length fail.
    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        if text.trim().is_empty() {
            return Err(LlmError::InvalidInput("cannot embed empty text".into()));
        }
        let request = EmbeddingRequest {
            model: self.config.embedding_model().to_string(),
            input: text.to_string(),
        };
        let body = self.post("embeddings", &request)?;
        let parsed: EmbeddingResponse =
            serde_json::from_str(&body).map_err(|e| LlmError::Parse(self.redact(&e.to_string())))?;
        let embedding = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .ok_or_else(|| LlmError::Parse("response has no data[0].embedding".into()))?;
        if embedding.is_empty() {
            return Err(LlmError::Parse("empty embedding".into()));
        }
        let mut dim = self.dimension.lock().unwrap_or_else(|e| e.into_inner());
        match *dim {
            Some(expected) if expected != embedding.len() => Err(LlmError::DimensionDrift {
                expected,
                found: embedding.len(),
            }),
            Some(_) => Ok(embedding),
            None => {
                *dim = Some(embedding.len());
                Ok(embedding)
            }
        }
    }
}
