//! OpenAI-compatible chat-completions backend over blocking HTTP.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, ModelRole, Usage};

/// Bearer token source.
pub const API_KEY_ENV: &str = "COGFORGE_API_KEY";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub url: String,
    pub model: String,
}

impl Endpoint {
    /// Absolute http(s) URL with a host, and a non-empty model name.
    pub fn validate(&self) -> Result<(), String> {
        let uri: ureq::http::Uri = self
            .url
            .parse()
            .map_err(|e| format!("invalid url {:?}: {e}", self.url))?;
        match (uri.scheme_str(), uri.host()) {
            (Some("http" | "https"), Some(host)) if !host.is_empty() => {}
            _ => return Err(format!("url {:?} must be an absolute http(s) URL", self.url)),
        }
        if self.model.trim().is_empty() {
            return Err(format!("endpoint {:?} has an empty model name", self.url));
        }
        Ok(())
    }
}

pub struct HttpBackend {
    agent: ureq::Agent,
    endpoints: BTreeMap<ModelRole, Endpoint>,
    api_key: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoints: BTreeMap<ModelRole, Endpoint>, timeout: Duration) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            endpoints,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }
}

/// Request body for the chat-completions endpoint.
pub(crate) fn request_body(model: &str, request: &ChatRequest) -> serde_json::Value {
    json!({
        "model": model,
        "messages": [
            {"role": "system", "content": request.system},
            {"role": "user", "content": request.user},
        ],
        "temperature": request.sampling.temperature,
        "top_p": request.sampling.top_p,
        "top_k": request.sampling.top_k,
        "max_tokens": request.sampling.max_tokens,
    })
}

#[derive(Deserialize)]
struct CompletionBody {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<UsageBody>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct UsageBody {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(crate) fn parse_completion(body: &str) -> Result<(String, Usage), String> {
    let parsed: CompletionBody = serde_json::from_str(body).map_err(|e| e.to_string())?;
    let text = parsed
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| "response has no choices".to_string())?
        .message
        .content
        .unwrap_or_default();
    let usage = parsed
        .usage
        .map(|u| Usage {
            prompt_tokens: u.prompt_tokens,
            completion_tokens: u.completion_tokens,
        })
        .unwrap_or_default();
    Ok((text, usage))
}

impl ChatBackend for HttpBackend {
    fn has_role(&self, role: ModelRole) -> bool {
        self.endpoints.contains_key(&role)
    }

    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let endpoint = self
            .endpoints
            .get(&request.model_role)
            .ok_or_else(|| BackendError::Transport(format!("role {} unmapped", request.model_role)))?;
        let started = Instant::now();
        let mut call = self.agent.post(&endpoint.url);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = call
            .send_json(request_body(&endpoint.model, request))
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Provider { status, body });
        }
        // A 2xx with an unreadable body is surfaced with its text intact.
        let (text, usage) = parse_completion(&body).map_err(|e| BackendError::Provider {
            status,
            body: format!("{e}: {body}"),
        })?;
        Ok(ChatResponse {
            text,
            usage,
            latency: started.elapsed(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{CallKey, SamplingParams};

    #[test]
    fn body_has_wire_fields() {
        let req = ChatRequest {
            model_role: ModelRole::Large,
            system: "S".into(),
            user: "U".into(),
            sampling: SamplingParams::default(),
            key: CallKey::new("critic", "1", 0),
        };
        let body = request_body("m", &req);
        assert_eq!(body["model"], "m");
        assert_eq!(body["messages"][0]["role"], "system");
        assert_eq!(body["messages"][1]["content"], "U");
        assert_eq!(body["temperature"], 0.7);
        assert_eq!(body["top_p"], 0.9);
        assert_eq!(body["top_k"], 50);
        assert_eq!(body["max_tokens"], 4096);
    }

    #[test]
    fn endpoint_urls() {
        let ep = |url: &str| Endpoint {
            url: url.into(),
            model: "m".into(),
        };
        assert!(ep("http://127.0.0.1:8000/v1/chat/completions").validate().is_ok());
        assert!(ep("https://api.example.com/v1/chat/completions").validate().is_ok());
        for bad in ["", "localhost:8000", "ftp://host/x", "http://", "not a url"] {
            assert!(ep(bad).validate().is_err(), "{bad}");
        }
        let unnamed = Endpoint {
            model: " ".into(),
            ..ep("http://h/x")
        };
        assert!(unnamed.validate().is_err());
    }

    #[test]
    fn parses_completion_body() {
        let body = r#"{"choices":[{"message":{"role":"assistant","content":" medium\n"}}],"usage":{"prompt_tokens":12,"completion_tokens":1}}"#;
        let (text, usage) = parse_completion(body).unwrap();
        assert_eq!(text, " medium\n");
        assert_eq!(usage.prompt_tokens, 12);
        assert!(parse_completion(r#"{"choices":[]}"#).is_err());
    }
}
