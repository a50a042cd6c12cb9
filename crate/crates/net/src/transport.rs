//! Blocking chat-completion transport over HTTP.
//!
//! Requests go to `POST {base_url}/{path}` with a single user message. The
//! reply text is read from `choices[0].message.content`.

use std::collections::BTreeMap;
use std::time::Duration;

use serde_json::{json, Value};

use lexdrift_core::genclient::{EndpointProfile, GenerationRequest, Transport, TransportError};
use lexdrift_core::{Error, Result};

pub const ENV_BASE: &str = "LEXDRIFT_API_BASE";
pub const ENV_KEY: &str = "LEXDRIFT_API_KEY";

#[derive(Debug, Clone)]
pub struct HttpTransport {
    pub base_url: String,
    pub path: String,
    pub api_key: Option<String>,
    /// Model name sent for each endpoint profile.
    pub models: BTreeMap<EndpointProfile, String>,
    pub timeout: Duration,
    agent: ureq::Agent,
}

impl HttpTransport {
    pub fn new(base_url: &str, api_key: Option<String>) -> Result<Self> {
        if base_url.trim().is_empty() {
            return Err(Error::Config("API base URL is empty".into()));
        }
        let timeout = Duration::from_secs(120);
        Ok(HttpTransport {
            base_url: base_url.trim_end_matches('/').to_string(),
            path: "v1/chat/completions".into(),
            api_key,
            models: BTreeMap::new(),
            timeout,
            agent: agent(timeout),
        })
    }

    /// Reads `LEXDRIFT_API_BASE` and `LEXDRIFT_API_KEY`.
    pub fn from_env() -> Result<Self> {
        let base = std::env::var(ENV_BASE).map_err(|_| Error::Config(format!("{ENV_BASE} is not set")))?;
        HttpTransport::new(&base, std::env::var(ENV_KEY).ok())
    }

    pub fn with_path(mut self, path: &str) -> Self {
        self.path = path.trim_start_matches('/').to_string();
        self
    }

    pub fn with_model(mut self, profile: EndpointProfile, model: &str) -> Self {
        self.models.insert(profile, model.to_string());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self.agent = agent(timeout);
        self
    }

    pub fn url(&self) -> String {
        format!("{}/{}", self.base_url, self.path)
    }

    pub fn payload(&self, request: &GenerationRequest) -> Value {
        let model = self
            .models
            .get(&request.profile)
            .cloned()
            .unwrap_or_else(|| request.profile.to_string());
        let mut body = json!({
            "model": model,
            "messages": [{ "role": "user", "content": request.prompt }],
        });
        let obj = body.as_object_mut().expect("object literal");
        for (k, v) in &request.params {
            obj.insert(k.clone(), v.clone());
        }
        body
    }
}

fn agent(timeout: Duration) -> ureq::Agent {
    ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into()
}

fn extract_content(body: &Value) -> Option<String> {
    body.pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
}

impl Transport for HttpTransport {
    fn complete(&self, request: &GenerationRequest) -> std::result::Result<String, TransportError> {
        let mut req = self.agent.post(self.url()).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req
            .send_json(self.payload(request))
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Retryable(e.to_string()))?;
        match status {
            200..=299 => {
                let body: Value = serde_json::from_str(&text)
                    .map_err(|e| TransportError::Fatal(format!("response is not JSON: {e}")))?;
                extract_content(&body)
                    .ok_or_else(|| TransportError::Fatal("response has no choices[0].message.content".into()))
            }
            408 | 429 | 500..=599 => Err(TransportError::Retryable(format!("HTTP {status}: {text}"))),
            _ => Err(TransportError::Fatal(format!("HTTP {status}: {text}"))),
        }
    }
}
