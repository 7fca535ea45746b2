//! Chat-completion backends: an OpenAI-compatible HTTP client and a scripted
//! mock for offline use.

use std::fmt;
use std::time::Duration;

use reqwest::blocking::Client;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::debug;

use crate::config::defaults;
use crate::http::{self, HttpFailure, RetryPolicy, Secret};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LlmError {
    #[error("chat provider error (status {status}): {excerpt}")]
    Provider { status: u16, excerpt: String },
    #[error("chat request timed out")]
    Timeout,
    #[error("malformed chat response: {0}")]
    MalformedResponse(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("invalid chat request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
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
#[serde(default, deny_unknown_fields)]
pub struct ChatParams {
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_s: u64,
}

impl Default for ChatParams {
    fn default() -> Self {
        Self {
            model: defaults::CHAT_MODEL.to_string(),
            temperature: defaults::TEMPERATURE,
            max_tokens: None,
            timeout_s: defaults::CHAT_TIMEOUT_S,
        }
    }
}

impl ChatParams {
    pub fn validate(&self) -> Result<(), LlmError> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// A chat-completion backend.
pub trait ChatClient: Send + Sync {
    /// Returns the assistant text for `messages`, whose last entry must be a
    /// user turn.
    fn chat(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, LlmError>;
}

pub fn validate_messages(messages: &[ChatMessage]) -> Result<(), LlmError> {
    match messages.last() {
        None => return Err(LlmError::InvalidRequest("no messages".into())),
        Some(m) if m.role != Role::User => {
            return Err(LlmError::InvalidRequest("last message must be a user turn".into()))
        }
        _ => {}
    }
    if let Some(m) = messages
        .iter()
        .find(|m| m.role != Role::Assistant && m.content.trim().is_empty())
    {
        return Err(LlmError::InvalidRequest(format!("empty {} message", m.role)));
    }
    Ok(())
}

/// What the mock answers when no rule matches.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "text")]
pub enum MockFallback {
    /// `"ECHO:"` followed by the last user message.
    Echo,
    Fixed(String),
}

/// Deterministic scripted backend. Rules are `(substring, response)` pairs
/// tried in order against the last user message; the first match wins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockChatClient {
    rules: Vec<(String, String)>,
    fallback: MockFallback,
}

impl MockChatClient {
    pub fn echo() -> Self {
        mock_script(Vec::new(), MockFallback::Echo)
    }

    pub fn fixed(text: impl Into<String>) -> Self {
        mock_script(Vec::new(), MockFallback::Fixed(text.into()))
    }
}

pub fn mock_script(rules: Vec<(String, String)>, fallback: MockFallback) -> MockChatClient {
    MockChatClient { rules, fallback }
}

impl ChatClient for MockChatClient {
    fn chat(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, LlmError> {
        validate_messages(messages)?;
        params.validate()?;
        let prompt = &messages.last().expect("validated non-empty").content;
        if let Some((_, reply)) = self.rules.iter().find(|(needle, _)| prompt.contains(needle.as_str())) {
            return Ok(reply.clone());
        }
        Ok(match &self.fallback {
            MockFallback::Echo => format!("ECHO:{prompt}"),
            MockFallback::Fixed(text) => text.clone(),
        })
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint. Any server
/// speaking that wire shape works, including local open-model servers.
pub struct RemoteChatClient {
    client: Client,
    url: String,
    api_key: Secret,
    retry: RetryPolicy,
}

impl fmt::Debug for RemoteChatClient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteChatClient")
            .field("url", &self.url)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    max_tokens: Option<u32>,
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl RemoteChatClient {
    pub fn new(endpoint: &str, api_key: Secret) -> Result<Self, LlmError> {
        if url::Url::parse(endpoint).is_err() {
            return Err(LlmError::InvalidRequest(format!("invalid endpoint {endpoint:?}")));
        }
        let client = Client::builder()
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        Ok(Self {
            client,
            url: http::join_url(endpoint, "chat/completions"),
            api_key,
            retry: RetryPolicy::default(),
        })
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

impl ChatClient for RemoteChatClient {
    fn chat(&self, messages: &[ChatMessage], params: &ChatParams) -> Result<String, LlmError> {
        validate_messages(messages)?;
        params.validate()?;
        let body = serde_json::to_value(CompletionRequest {
            model: &params.model,
            messages,
            temperature: params.temperature,
            max_tokens: params.max_tokens,
        })
        .expect("request serializes");
        debug!(url = %self.url, model = %params.model, n = messages.len(), "chat completion");
        let timeout = Some(Duration::from_secs(params.timeout_s));
        let text = http::post_json(&self.client, &self.url, &self.api_key, &body, timeout, &self.retry)
            .map_err(|f| match f {
                HttpFailure::Status { status, excerpt } => LlmError::Provider { status, excerpt },
                HttpFailure::Timeout => LlmError::Timeout,
                HttpFailure::Transport(msg) => LlmError::Transport(msg),
            })?;
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| LlmError::MalformedResponse(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::MalformedResponse("no choices with content".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ask(client: &dyn ChatClient, text: &str) -> Result<String, LlmError> {
        client.chat(&[ChatMessage::user(text)], &ChatParams::default())
    }

    #[test]
    fn scripted_rule_matches() {
        let mock = mock_script(
            vec![("dress code".into(), "canned answer A".into())],
            MockFallback::Fixed("nope".into()),
        );
        assert_eq!(ask(&mock, "what is the dress code?").unwrap(), "canned answer A");
        assert_eq!(ask(&mock, "unrelated").unwrap(), "nope");
    }

    #[test]
    fn first_rule_wins() {
        let mock = mock_script(
            vec![("a".into(), "first".into()), ("ab".into(), "second".into())],
            MockFallback::Echo,
        );
        assert_eq!(ask(&mock, "xaby").unwrap(), "first");
    }

    #[test]
    fn echo_fallback() {
        let mock = MockChatClient::echo();
        assert_eq!(ask(&mock, "hello there").unwrap(), "ECHO:hello there");
        let msgs = [ChatMessage::user("one"), ChatMessage::assistant("a"), ChatMessage::user("two")];
        assert_eq!(mock.chat(&msgs, &ChatParams::default()).unwrap(), "ECHO:two");
    }

    #[test]
    fn replay_is_deterministic() {
        let mock = mock_script(vec![("x".into(), "X".into())], MockFallback::Echo);
        let first: Vec<_> = (0..100).map(|i| ask(&mock, &format!("q{i}x")).unwrap()).collect();
        let second: Vec<_> = (0..100).map(|i| ask(&mock, &format!("q{i}x")).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn message_validation() {
        let mock = MockChatClient::echo();
        let p = ChatParams::default();
        assert!(matches!(mock.chat(&[], &p), Err(LlmError::InvalidRequest(_))));
        assert!(matches!(
            mock.chat(&[ChatMessage::assistant("hi")], &p),
            Err(LlmError::InvalidRequest(_))
        ));
        assert!(matches!(
            mock.chat(&[ChatMessage::system(" "), ChatMessage::user("x")], &p),
            Err(LlmError::InvalidRequest(_))
        ));
        let hot = ChatParams {
            temperature: -0.1,
            ..Default::default()
        };
        assert!(matches!(ask_with(&mock, &hot), Err(LlmError::InvalidRequest(_))));
    }

    fn ask_with(client: &dyn ChatClient, p: &ChatParams) -> Result<String, LlmError> {
        client.chat(&[ChatMessage::user("x")], p)
    }

    #[test]
    fn defaults() {
        let p = ChatParams::default();
        assert_eq!(p.model, "gpt-3.5-turbo");
        assert_eq!(p.temperature, 0.0);
        assert_eq!(p.timeout_s, 60);
    }
}
