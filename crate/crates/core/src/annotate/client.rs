//! OpenAI-compatible chat-completion transport.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::prompt::ChatMessage;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub top_p: f64,
}

/// Raw HTTP outcome; interpretation happens in the annotator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

pub trait ChatEndpoint: Sync {
    fn model(&self) -> &str;

    /// Send one request. `Err` means no HTTP response was obtained at all
    /// (connection refused, timeout) and is treated as transient.
    fn send(&self, request: &ChatRequest) -> std::result::Result<HttpReply, String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    /// Base URL; requests go to `{base_url}/chat/completions`.
    pub base_url: String,
    pub model: String,
    /// Environment variable holding the API key, if any.
    pub api_key_env: Option<String>,
    /// `Authorization` sends `Bearer <key>`; any other header name (e.g.
    /// Azure's `api-key`) sends the key verbatim.
    pub auth_header: String,
    pub timeout_secs: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            base_url: "https://api.openai.com/v1".into(),
            model: "gpt-3.5-turbo".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            auth_header: "Authorization".into(),
            timeout_secs: 60,
        }
    }
}

pub struct HttpEndpoint {
    url: String,
    model: String,
    auth: Option<(String, String)>,
    agent: ureq::Agent,
    audit: Option<Mutex<File>>,
}

impl HttpEndpoint {
    pub fn new(config: &EndpointConfig) -> Result<Self> {
        let key = match &config.api_key_env {
            Some(var) => std::env::var(var).ok(),
            None => None,
        };
        let auth = key.map(|key| {
            if config.auth_header.eq_ignore_ascii_case("authorization") {
                (config.auth_header.clone(), format!("Bearer {key}"))
            } else {
                (config.auth_header.clone(), key)
            }
        });
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs.max(1))))
            .build()
            .into();
        Ok(HttpEndpoint {
            url: format!("{}/chat/completions", config.base_url.trim_end_matches('/')),
            model: config.model.clone(),
            auth,
            agent,
            audit: None,
        })
    }

    /// Append every request/response pair to a JSONL audit file.
    pub fn with_audit_log(mut self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        self.audit = Some(Mutex::new(file));
        Ok(self)
    }

    fn record(&self, request: &ChatRequest, outcome: &std::result::Result<HttpReply, String>) {
        let Some(audit) = &self.audit else { return };
        let entry = match outcome {
            Ok(reply) => serde_json::json!({
                "request": request,
                "status": reply.status,
                "response": reply.body,
            }),
            Err(err) => serde_json::json!({ "request": request, "transport_error": err }),
        };
        let mut file = audit.lock().unwrap_or_else(|p| p.into_inner());
        if let Err(e) = writeln!(file, "{entry}") {
            log::warn!("audit log write failed: {e}");
        }
    }
}

impl ChatEndpoint for HttpEndpoint {
    fn model(&self) -> &str {
        &self.model
    }

    fn send(&self, request: &ChatRequest) -> std::result::Result<HttpReply, String> {
        let mut call = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some((name, value)) = &self.auth {
            call = call.header(name.as_str(), value.as_str());
        }
        let outcome = match call.send_json(request) {
            Ok(mut response) => {
                let status = response.status().as_u16();
                response
                    .body_mut()
                    .read_to_string()
                    .map(|body| HttpReply { status, body })
                    .map_err(|e| e.to_string())
            }
            Err(e) => Err(e.to_string()),
        };
        self.record(request, &outcome);
        outcome
    }
}

#[derive(Debug, Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: Option<ResponseMessage>,
    finish_reason: Option<String>,
}

#[derive(Debug, Deserialize)]
struct ResponseMessage {
    content: Option<String>,
}

/// What a 2xx body contained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Completion {
    Text(String),
    Filtered,
}

pub(crate) fn parse_completion(body: &str) -> std::result::Result<Completion, String> {
    let parsed: CompletionBody =
        serde_json::from_str(body).map_err(|e| format!("malformed completion body: {e}"))?;
    let choice = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "completion has no choices".to_owned())?;
    if choice.finish_reason.as_deref() == Some("content_filter") {
        return Ok(Completion::Filtered);
    }
    choice
        .message
        .and_then(|m| m.content)
        .map(Completion::Text)
        .ok_or_else(|| "completion has no message content".to_owned())
}

/// Content-policy rejections as reported by OpenAI and Azure OpenAI.
pub(crate) fn is_content_policy(body: &str) -> bool {
    const CODES: [&str; 3] = ["content_filter", "content_policy_violation", "ResponsibleAIPolicyViolation"];
    if let Ok(value) = serde_json::from_str::<serde_json::Value>(body) {
        let error = &value["error"];
        let codes = [&error["code"], &error["type"], &error["innererror"]["code"]];
        if codes
            .iter()
            .filter_map(|c| c.as_str())
            .any(|c| CODES.contains(&c))
        {
            return true;
        }
    }
    CODES.iter().any(|c| body.contains(c))
}
