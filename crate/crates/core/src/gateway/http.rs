use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use super::{ChatModel, ChatRequest, ChatResponse, FinishReason, GatewayError, Usage};

/// Backend for OpenAI-style `POST {base_url}/chat/completions` endpoints.
pub struct HttpBackend {
    base_url: String,
    api_key: String,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        HttpBackend { base_url: base_url.into().trim_end_matches('/').to_string(), api_key: api_key.into(), agent }
    }

    fn url(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub(crate) fn request_body(req: &ChatRequest) -> serde_json::Value {
    json!({
        "model": req.model,
        "messages": req.messages.iter().map(|m| json!({"role": m.role.as_str(), "content": m.content})).collect::<Vec<_>>(),
        "temperature": req.temperature,
        "max_tokens": req.max_output_tokens,
    })
}

pub(crate) fn parse_response_body(body: &str) -> Result<ChatResponse, GatewayError> {
    let wire: WireResponse = serde_json::from_str(body).map_err(|e| GatewayError::Protocol(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::Protocol("response has no choices".into()))?;
    let text = choice.message.content.unwrap_or_default();
    let finish_reason = match choice.finish_reason.as_deref() {
        Some("length") => FinishReason::Truncated,
        _ if text.is_empty() => FinishReason::Error,
        _ => FinishReason::Complete,
    };
    let usage = wire
        .usage
        .map(|u| Usage { prompt_tokens: u.prompt_tokens, output_tokens: u.completion_tokens })
        .unwrap_or_default();
    Ok(ChatResponse { text, finish_reason, usage })
}

impl ChatModel for HttpBackend {
    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, GatewayError> {
        let result = self
            .agent
            .post(&self.url())
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(request_body(req));
        let mut resp = match result {
            Ok(r) => r,
            Err(e) => return Err(GatewayError::Transient(e.to_string())),
        };
        let code = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| GatewayError::Transient(format!("reading body: {e}")))?;
        match code {
            200..=299 => parse_response_body(&body),
            408 | 409 | 429 | 500..=599 => Err(GatewayError::Transient(format!("HTTP {code}: {body}"))),
            _ => Err(GatewayError::Status { code, body }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;

    #[test]
    fn wire_request_shape() {
        let req = ChatRequest {
            model: "gpt-x".into(),
            messages: vec![ChatMessage::user("hi")],
            temperature: 0.0,
            max_output_tokens: 10,
        };
        let v = request_body(&req);
        assert_eq!(v["model"], "gpt-x");
        assert_eq!(v["messages"][0]["role"], "user");
        assert_eq!(v["messages"][0]["content"], "hi");
        assert_eq!(v["max_tokens"], 10);
    }

    #[test]
    fn wire_response_parsing() {
        let ok = r#"{"choices":[{"message":{"role":"assistant","content":"YES"},"finish_reason":"stop"}],"usage":{"prompt_tokens":3,"completion_tokens":1}}"#;
        let r = parse_response_body(ok).unwrap();
        assert_eq!(r.text, "YES");
        assert_eq!(r.finish_reason, FinishReason::Complete);
        assert_eq!(r.usage, Usage { prompt_tokens: 3, output_tokens: 1 });

        let cut = r#"{"choices":[{"message":{"content":"partial"},"finish_reason":"length"}]}"#;
        assert_eq!(parse_response_body(cut).unwrap().finish_reason, FinishReason::Truncated);

        assert!(matches!(parse_response_body(r#"{"choices":[]}"#), Err(GatewayError::Protocol(_))));
    }
}
