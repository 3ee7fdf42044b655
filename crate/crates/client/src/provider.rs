use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::ClientError;

pub const API_KEY_ENV: &str = "HAIPW_API_KEY";
pub const API_URL_ENV: &str = "HAIPW_API_URL";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Decoding {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for Decoding {
    fn default() -> Self {
        Self { temperature: 1.2, top_p: 0.9, max_tokens: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetryPolicy {
    pub attempts: u32,
    /// Delay before the second attempt; doubles after each failure.
    pub initial_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { attempts: 3, initial_backoff_ms: 1000 }
    }
}

impl RetryPolicy {
    pub fn delay_before(&self, attempt: u32) -> Duration {
        if attempt == 0 {
            Duration::ZERO
        } else {
            Duration::from_millis(self.initial_backoff_ms.saturating_mul(1u64 << (attempt - 1).min(20)))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint_url: String,
    pub model_identifier: String,
    #[serde(default)]
    pub decoding: Decoding,
    /// Name of the environment variable holding the bearer token.
    #[serde(default = "default_auth_env")]
    pub auth_env: String,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_auth_env() -> String {
    API_KEY_ENV.to_owned()
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout() -> u64 {
    60
}

impl ProviderConfig {
    pub fn new(endpoint_url: impl Into<String>, model_identifier: impl Into<String>) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_identifier: model_identifier.into(),
            decoding: Decoding::default(),
            auth_env: default_auth_env(),
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
        }
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.max_in_flight == 0 {
            return Err(ClientError::InvalidConfig("max_in_flight must be at least 1".into()));
        }
        if self.retry.attempts == 0 {
            return Err(ClientError::InvalidConfig("retry.attempts must be at least 1".into()));
        }
        Ok(())
    }

    /// The endpoint, with `HAIPW_API_URL` taking precedence when set.
    pub fn resolved_endpoint(&self) -> String {
        std::env::var(API_URL_ENV).ok().filter(|s| !s.is_empty()).unwrap_or_else(|| self.endpoint_url.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub model: String,
    pub system: String,
    pub user: String,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: Option<u64>,
}

impl CompletionRequest {
    /// Chat-completions request body.
    pub fn to_json(&self) -> Value {
        let mut body = json!({
            "model": self.model,
            "messages": [
                {"role": "system", "content": self.system},
                {"role": "user", "content": self.user},
            ],
            "temperature": self.temperature,
            "top_p": self.top_p,
            "max_tokens": self.max_tokens,
        });
        if let Some(seed) = self.seed {
            body["seed"] = json!(seed);
        }
        body
    }
}

/// Failure to obtain any text from the provider.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransportError(pub String);

impl std::fmt::Display for TransportError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Source of completions.
pub trait CompletionProvider: Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError>;
}

/// Generic chat-completions endpoint over HTTPS.
pub struct HttpProvider {
    client: reqwest::blocking::Client,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn from_config(config: &ProviderConfig) -> Result<Self, ClientError> {
        config.validate()?;
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ClientError::InvalidConfig(e.to_string()))?;
        let api_key = std::env::var(&config.auth_env).ok().filter(|s| !s.is_empty());
        Ok(Self { client, endpoint: config.resolved_endpoint(), api_key })
    }
}

/// Message text of a chat-completions response body.
pub fn extract_completion_text(body: &Value) -> Option<String> {
    let choice = body.get("choices")?.get(0)?;
    choice
        .get("message")
        .and_then(|m| m.get("content"))
        .or_else(|| choice.get("text"))
        .and_then(Value::as_str)
        .map(str::to_owned)
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<String, TransportError> {
        let mut builder = self.client.post(&self.endpoint).json(&request.to_json());
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| TransportError(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            return Err(TransportError(format!("HTTP {status}")));
        }
        let body: Value = response.json().map_err(|e| TransportError(e.to_string()))?;
        extract_completion_text(&body).ok_or_else(|| TransportError("response has no completion text".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_body_shape() {
        let r = CompletionRequest {
            model: "m".into(),
            system: "s".into(),
            user: "u".into(),
            temperature: 1.2,
            top_p: 0.9,
            max_tokens: 100,
            seed: None,
        };
        let body = r.to_json();
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "u");
        assert_eq!(body["max_tokens"], 100);
        assert!(body.get("seed").is_none());
    }

    #[test]
    fn completion_text_extraction() {
        let chat = json!({"choices": [{"message": {"role": "assistant", "content": "4"}}]});
        assert_eq!(extract_completion_text(&chat).as_deref(), Some("4"));
        let legacy = json!({"choices": [{"text": "2"}]});
        assert_eq!(extract_completion_text(&legacy).as_deref(), Some("2"));
        assert_eq!(extract_completion_text(&json!({"error": "x"})), None);
    }

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy::default();
        assert_eq!(p.delay_before(0), Duration::ZERO);
        assert_eq!(p.delay_before(1), Duration::from_secs(1));
        assert_eq!(p.delay_before(2), Duration::from_secs(2));
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: ProviderConfig = serde_json::from_str(r#"{"endpoint_url": "http://x", "model_identifier": "m"}"#).unwrap();
        assert_eq!(c.decoding, Decoding::default());
        assert_eq!(c.retry.attempts, 3);
        assert!(c.validate().is_ok());
        assert!(ProviderConfig { max_in_flight: 0, ..c }.validate().is_err());
    }
}
