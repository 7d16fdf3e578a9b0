//! OpenAI-compatible chat-completions client with inline image parts.

use std::io::Cursor;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use base64::Engine as _;
use image::RgbaImage;
use serde::Deserialize;
use serde_json::{json, Value};
use thiserror::Error;

/// Placeholder token marking where an image part goes in a message text.
pub const IMAGE_TOKEN: &str = "<image>";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChatRole {
    System,
    User,
    Assistant,
}

impl ChatRole {
    pub fn as_str(self) -> &'static str {
        match self {
            ChatRole::System => "system",
            ChatRole::User => "user",
            ChatRole::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContentPart {
    Text(String),
    Image(Arc<RgbaImage>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    pub role: ChatRole,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: ChatRole, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    /// Splits `text` on [`IMAGE_TOKEN`] and interleaves `images` in order.
    /// Tokens without a matching image stay as literal text.
    pub fn with_images(role: ChatRole, text: &str, images: &[Arc<RgbaImage>]) -> Self {
        let mut parts = Vec::new();
        let mut images = images.iter();
        let mut rest = text;
        while let Some(pos) = rest.find(IMAGE_TOKEN) {
            let Some(img) = images.next() else { break };
            if pos > 0 {
                parts.push(ContentPart::Text(rest[..pos].to_string()));
            }
            parts.push(ContentPart::Image(img.clone()));
            rest = &rest[pos + IMAGE_TOKEN.len()..];
        }
        if !rest.is_empty() {
            parts.push(ContentPart::Text(rest.to_string()));
        }
        Self { role, parts }
    }

    pub fn plain_text(&self) -> String {
        self.parts
            .iter()
            .map(|p| match p {
                ContentPart::Text(t) => t.as_str(),
                ContentPart::Image(_) => IMAGE_TOKEN,
            })
            .collect()
    }

    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, ContentPart::Image(_)))
            .count()
    }
}

#[derive(Debug, Error)]
pub enum ChatError {
    #[error("missing API key: environment variable `{0}` is not set")]
    MissingApiKey(String),
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("server returned HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed completion response: {0}")]
    BadResponse(String),
    #[error("image encoding failed: {0}")]
    Image(String),
}

#[derive(Debug, Clone)]
pub struct ChatConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_transport_retries: u32,
    pub backoff_base: Duration,
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".into(),
            model: "gpt-4o".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: Duration::from_secs(120),
            max_transport_retries: 3,
            backoff_base: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: Option<u64>,
}

pub struct ChatClient {
    config: ChatConfig,
    api_key: String,
    http: reqwest::blocking::Client,
}

impl std::fmt::Debug for ChatClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ChatClient")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl ChatClient {
    /// Reads the API key from the configured environment variable.
    pub fn from_env(config: ChatConfig) -> Result<Self, ChatError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| ChatError::MissingApiKey(config.api_key_env.clone()))?;
        Self::with_key(config, key)
    }

    pub fn with_key(config: ChatConfig, api_key: String) -> Result<Self, ChatError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| ChatError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(Self {
            config,
            api_key,
            http,
        })
    }

    pub fn config(&self) -> &ChatConfig {
        &self.config
    }

    /// Sends one completion request and returns the first choice's text.
    /// Transport failures, 429 and 5xx responses are retried with
    /// exponential backoff; other HTTP errors are returned immediately.
    pub fn complete(
        &self,
        messages: &[ChatMessage],
        params: SamplingParams,
    ) -> Result<String, ChatError> {
        let body = request_body(&self.config.model, messages, params)?;
        let url = format!("{}/chat/completions", self.config.endpoint.trim_end_matches('/'));
        let mut attempt = 0u32;
        loop {
            attempt += 1;
            let result = self
                .http
                .post(&url)
                .bearer_auth(&self.api_key)
                .json(&body)
                .send();
            let retryable = match result {
                Ok(resp) => {
                    let status = resp.status();
                    let text = resp.text().map_err(|e| ChatError::Transport {
                        attempts: attempt,
                        message: e.to_string(),
                    })?;
                    if status.is_success() {
                        return extract_content(&text);
                    }
                    let err = ChatError::Http {
                        status: status.as_u16(),
                        body: text,
                    };
                    if status.as_u16() != 429 && !status.is_server_error() {
                        return Err(err);
                    }
                    err
                }
                Err(e) => ChatError::Transport {
                    attempts: attempt,
                    message: e.to_string(),
                },
            };
            if attempt > self.config.max_transport_retries {
                return Err(match retryable {
                    ChatError::Transport { message, .. } => ChatError::Transport {
                        attempts: attempt,
                        message,
                    },
                    other => other,
                });
            }
            let delay = self.config.backoff_base * 2u32.saturating_pow(attempt - 1);
            log::warn!("chat request failed ({retryable}); retrying in {delay:?}");
            thread::sleep(delay);
        }
    }
}

pub fn encode_png(img: &RgbaImage) -> Result<Vec<u8>, ChatError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)
        .map_err(|e| ChatError::Image(e.to_string()))?;
    Ok(buf.into_inner())
}

/// JSON body of a chat-completions request.
pub fn request_body(
    model: &str,
    messages: &[ChatMessage],
    params: SamplingParams,
) -> Result<Value, ChatError> {
    let mut wire = Vec::with_capacity(messages.len());
    for m in messages {
        let mut content = Vec::with_capacity(m.parts.len());
        for part in &m.parts {
            content.push(match part {
                ContentPart::Text(t) => json!({ "type": "text", "text": t }),
                ContentPart::Image(img) => {
                    let b64 = base64::engine::general_purpose::STANDARD.encode(encode_png(img)?);
                    json!({
                        "type": "image_url",
                        "image_url": { "url": format!("data:image/png;base64,{b64}") }
                    })
                }
            });
        }
        wire.push(json!({ "role": m.role.as_str(), "content": content }));
    }
    let mut body = json!({
        "model": model,
        "messages": wire,
        "temperature": params.temperature,
        "top_p": params.top_p,
    });
    if let Some(seed) = params.seed {
        body["seed"] = json!(seed);
    }
    Ok(body)
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
}

#[derive(Deserialize)]
struct ResponseMessage {
    content: Option<Value>,
}

fn extract_content(body: &str) -> Result<String, ChatError> {
    let resp: CompletionResponse =
        serde_json::from_str(body).map_err(|e| ChatError::BadResponse(e.to_string()))?;
    let choice = resp
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| ChatError::BadResponse("no choices".into()))?;
    match choice.message.content {
        Some(Value::String(s)) => Ok(s),
        // Some servers return content as an array of typed parts.
        Some(Value::Array(parts)) => Ok(parts
            .iter()
            .filter_map(|p| p.get("text").and_then(Value::as_str))
            .collect()),
        _ => Err(ChatError::BadResponse("choice has no text content".into())),
    }
}
