use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage { role: Role::Assistant, content: content.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl ChatRequest {
    pub fn validate(&self) -> Result<(), String> {
        if self.messages.is_empty() {
            return Err("request has no messages".into());
        }
        if let Some(first) = self.messages.iter().find(|m| m.role != Role::System) {
            if first.role != Role::User {
                return Err("first non-system message must come from the user".into());
            }
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(format!("temperature must be non-negative, got {}", self.temperature));
        }
        Ok(())
    }

    /// Version tag mixed into every fingerprint. Bump when the canonical form
    /// changes so stale caches miss instead of matching wrongly.
    pub const FINGERPRINT_VERSION: &'static str = "vulrag-fp-v1";

    /// SHA-256 over a length-prefixed canonical form of every field. Message
    /// text is taken byte-exact: whitespace and order both matter.
    pub fn fingerprint(&self) -> Fingerprint {
        let mut h = Sha256::new();
        let mut put = |tag: &str, v: &[u8]| {
            h.update(tag.as_bytes());
            h.update(b":");
            h.update(v.len().to_string().as_bytes());
            h.update(b":");
            h.update(v);
            h.update(b"\n");
        };
        put("version", Self::FINGERPRINT_VERSION.as_bytes());
        put("model", self.model.as_bytes());
        put("temperature", format!("{:?}", self.temperature).as_bytes());
        put("max_output_tokens", self.max_output_tokens.to_string().as_bytes());
        for m in &self.messages {
            put(m.role.as_str(), m.content.as_bytes());
        }
        Fingerprint(hex::encode(h.finalize()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fingerprint(pub String);

impl fmt::Display for Fingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    Complete,
    Truncated,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    #[serde(default)]
    pub usage: Usage,
}

impl ChatResponse {
    pub fn complete(text: impl Into<String>) -> Self {
        ChatResponse { text: text.into(), finish_reason: FinishReason::Complete, usage: Usage::default() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            messages: vec![ChatMessage::user(text)],
            temperature: 0.0,
            max_output_tokens: 512,
        }
    }

    #[test]
    fn fingerprint_changes_with_every_field() {
        let base = req("hello");
        let fp = base.fingerprint();
        assert_eq!(fp, req("hello").fingerprint());
        assert_ne!(fp, req("hello ").fingerprint());
        assert_ne!(fp, ChatRequest { model: "n".into(), ..base.clone() }.fingerprint());
        assert_ne!(fp, ChatRequest { temperature: 0.5, ..base.clone() }.fingerprint());
        assert_ne!(fp, ChatRequest { max_output_tokens: 1, ..base.clone() }.fingerprint());
        let mut two = base.clone();
        two.messages.push(ChatMessage::assistant("x"));
        assert_ne!(fp, two.fingerprint());
    }

    #[test]
    fn fingerprint_is_injective_on_boundaries() {
        let mut a = req("ab");
        a.messages.push(ChatMessage::user("c"));
        let mut b = req("a");
        b.messages.push(ChatMessage::user("bc"));
        assert_ne!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn validation() {
        assert!(req("x").validate().is_ok());
        let mut r = req("x");
        r.messages.clear();
        assert!(r.validate().is_err());
        let r = ChatRequest { messages: vec![ChatMessage::assistant("x")], ..req("x") };
        assert!(r.validate().is_err());
        let r = ChatRequest { temperature: -1.0, ..req("x") };
        assert!(r.validate().is_err());
    }
}
