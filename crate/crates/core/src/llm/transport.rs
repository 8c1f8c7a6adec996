use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{AdapterError, PromptEnvelope};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// Chat-completion request body: a role-specific system prompt followed by the payload.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
}

impl ChatRequest {
    pub fn new(model: &str, env: &PromptEnvelope) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: env.role.system_prompt().into(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: env.payload.clone(),
                },
            ],
            temperature: 0.0,
        }
    }
}

pub trait Transport: Send + Sync {
    fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, AdapterError>;
}

/// Blocking HTTP transport for OpenAI-style `/chat/completions` endpoints.
pub struct HttpTransport {
    endpoint: String,
    api_key: Option<String>,
}

#[derive(Deserialize)]
struct Completion {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

impl HttpTransport {
    pub fn new(endpoint: String, api_key: Option<String>) -> Self {
        Self { endpoint, api_key }
    }
}

impl Transport for HttpTransport {
    fn complete(&self, req: &ChatRequest, timeout: Duration) -> Result<String, AdapterError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let mut call = agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = call.send_json(req).map_err(|e| match e {
            ureq::Error::Timeout(_) => AdapterError::Timeout,
            other => AdapterError::Transport(other.to_string()),
        })?;
        let body: Completion = resp
            .body_mut()
            .read_json()
            .map_err(|e| AdapterError::ParseFailure(format!("completion body: {e}")))?;
        body.choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| AdapterError::ParseFailure("completion has no choices".into()))
    }
}
