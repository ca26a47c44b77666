//! Minimal chat-completions client.
//!
//! Request body: `{"model", "messages": [{"role": "user", "content"}], "stop", "max_tokens"}`.
//! The reply text is read from `choices[0].message.content`.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{truncate_generation, EpisodeState, GenerationError, GenerationRequest, GenerationResult, TextGenerator};

pub const ENV_ENDPOINT: &str = "VOSAGENT_LLM_ENDPOINT";
pub const ENV_MODEL: &str = "VOSAGENT_LLM_MODEL";
pub const ENV_API_KEY: &str = "VOSAGENT_LLM_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RemoteConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(default, skip_serializing)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_s")]
    pub timeout_s: u64,
}

fn default_timeout_s() -> u64 {
    120
}

impl RemoteConfig {
    /// Reads endpoint, model and key from the environment.
    pub fn from_env() -> Result<Self, GenerationError> {
        let endpoint = std::env::var(ENV_ENDPOINT)
            .map_err(|_| GenerationError::Connectivity(format!("{ENV_ENDPOINT} is not set")))?;
        Ok(RemoteConfig {
            endpoint,
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| "default".into()),
            api_key: std::env::var(ENV_API_KEY).ok(),
            timeout_s: default_timeout_s(),
        })
    }

    /// Environment values override the configured ones when set.
    pub fn with_env_overrides(mut self) -> Self {
        if let Ok(v) = std::env::var(ENV_ENDPOINT) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(ENV_MODEL) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(ENV_API_KEY) {
            self.api_key = Some(v);
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct ChatClient {
    config: RemoteConfig,
}

impl ChatClient {
    pub fn new(config: RemoteConfig) -> Self {
        ChatClient { config }
    }

    pub fn request_body(&self, prompt: &str, stop: &[String], max_tokens: usize) -> Value {
        json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": prompt}],
            "stop": stop,
            "max_tokens": max_tokens,
        })
    }

    pub fn complete(&self, prompt: &str, stop: &[String], max_tokens: usize) -> Result<String, GenerationError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(self.config.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        let body = serde_json::to_vec(&self.request_body(prompt, stop, max_tokens)).expect("json serializes");
        let mut req = agent
            .post(&self.config.endpoint)
            .header("Content-Type", "application/json");
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(&body[..])
            .map_err(|e| GenerationError::Connectivity(format!("POST {}: {e}", self.config.endpoint)))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GenerationError::Connectivity(e.to_string()))?;
        if status != 200 {
            return Err(GenerationError::Protocol(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())));
        }
        parse_reply(&text)
    }
}

pub fn parse_reply(text: &str) -> Result<String, GenerationError> {
    let v: Value = serde_json::from_str(text).map_err(|e| GenerationError::Protocol(format!("reply is not JSON: {e}")))?;
    v.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GenerationError::Protocol("reply lacks choices[0].message.content".into()))
}

/// Sends the full prompt each step; the stop sequences are also enforced
/// locally in case the server ignores them.
pub struct RemoteGenerator {
    client: ChatClient,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> Self {
        RemoteGenerator {
            client: ChatClient::new(config),
        }
    }
}

impl TextGenerator for RemoteGenerator {
    fn generate(
        &mut self,
        request: &GenerationRequest,
        _state: &EpisodeState<'_>,
    ) -> Result<GenerationResult, GenerationError> {
        let text = self
            .client
            .complete(&request.prompt, &request.stop_sequences, request.max_new_tokens)?;
        Ok(truncate_generation(&text, request))
    }
}
