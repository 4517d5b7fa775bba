//! OpenAI-compatible remote chat/embeddings client. One retry on transport
//! errors, none on provider refusals; the executor's fallback chain is the
//! real resilience mechanism.

use crate::llm::{
    BackendError, ChatBackend, ChatRequest, ChatResponse, EmbedBackend, EmbeddingVector,
};
use base64::Engine as _;
use serde::Deserialize;
use serde_json::json;
use std::time::Duration;

#[derive(Debug, Clone)]
pub struct RemoteConfig {
    /// Base URL, e.g. `https://api.example.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    /// Whether the deployed model accepts image parts in user messages.
    pub supports_images: bool,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(60),
            supports_images: false,
        }
    }
}

pub struct RemoteChatBackend {
    cfg: RemoteConfig,
    client: reqwest::blocking::Client,
}

pub struct RemoteEmbedBackend {
    cfg: RemoteConfig,
    dimension: usize,
    client: reqwest::blocking::Client,
}

fn build_client(timeout: Duration) -> Result<reqwest::blocking::Client, BackendError> {
    reqwest::blocking::Client::builder()
        .timeout(timeout)
        .build()
        .map_err(|e| BackendError::Config(format!("http client: {e}")))
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else if e.is_connect() || e.is_request() {
        BackendError::Transport(e.to_string())
    } else {
        BackendError::Provider(e.to_string())
    }
}

fn post_json(
    client: &reqwest::blocking::Client,
    url: &str,
    api_key: Option<&str>,
    body: &serde_json::Value,
) -> Result<serde_json::Value, BackendError> {
    let send = || -> Result<serde_json::Value, BackendError> {
        let mut req = client.post(url).json(body);
        if let Some(key) = api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            return Err(BackendError::Provider(format!("{status}: {text}")));
        }
        serde_json::from_str(&text)
            .map_err(|e| BackendError::Provider(format!("malformed response: {e}")))
    };
    // One retry on transport error only.
    match send() {
        Err(e) if e.is_transport() => send(),
        other => other,
    }
}

impl RemoteChatBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, BackendError> {
        let client = build_client(cfg.timeout)?;
        Ok(Self { cfg, client })
    }

    fn user_content(&self, req: &ChatRequest) -> Result<serde_json::Value, BackendError> {
        if req.images.is_empty() || !self.cfg.supports_images {
            return Ok(json!(req.user_prompt));
        }
        let mut parts = vec![json!({"type": "text", "text": req.user_prompt})];
        for path in &req.images {
            let bytes = std::fs::read(path)
                .map_err(|e| BackendError::Config(format!("cannot read image {path}: {e}")))?;
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        Ok(json!(parts))
    }
}

#[derive(Deserialize)]
struct ChatCompletion {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}
#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
}
#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}
#[derive(Deserialize, Default)]
struct Usage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

impl ChatBackend for RemoteChatBackend {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let url = format!("{}/chat/completions", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({
            "model": self.cfg.model,
            "temperature": req.temperature,
            "seed": req.seed,
            "max_tokens": req.max_tokens,
            "messages": [
                {"role": "system", "content": req.system_prompt},
                {"role": "user", "content": self.user_content(req)?},
            ],
        });
        let value = post_json(&self.client, &url, self.cfg.api_key.as_deref(), &body)?;
        let parsed: ChatCompletion = serde_json::from_value(value)
            .map_err(|e| BackendError::Provider(format!("malformed completion: {e}")))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Provider("completion has no choices".into()))?;
        let usage = parsed.usage.unwrap_or_default();
        Ok(ChatResponse {
            text: choice.message.content.unwrap_or_default(),
            prompt_tokens: usage.prompt_tokens,
            completion_tokens: usage.completion_tokens,
        })
    }

    fn supports_images(&self) -> bool {
        self.cfg.supports_images
    }
}

impl RemoteEmbedBackend {
    pub fn new(cfg: RemoteConfig, dimension: usize) -> Result<Self, BackendError> {
        let client = build_client(cfg.timeout)?;
        Ok(Self { cfg, dimension, client })
    }
}

#[derive(Deserialize)]
struct EmbeddingsResponse {
    data: Vec<EmbeddingDatum>,
}
#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl EmbedBackend for RemoteEmbedBackend {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        if text.trim().is_empty() {
            return Err(BackendError::EmptyInput("embed requires non-empty text".into()));
        }
        let url = format!("{}/embeddings", self.cfg.endpoint.trim_end_matches('/'));
        let body = json!({"model": self.cfg.model, "input": [text]});
        let value = post_json(&self.client, &url, self.cfg.api_key.as_deref(), &body)?;
        let parsed: EmbeddingsResponse = serde_json::from_value(value)
            .map_err(|e| BackendError::Provider(format!("malformed embeddings: {e}")))?;
        let datum = parsed
            .data
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Provider("embeddings response has no data".into()))?;
        if datum.embedding.len() != self.dimension {
            return Err(BackendError::Provider(format!(
                "embedding dimension {} != configured {}",
                datum.embedding.len(),
                self.dimension
            )));
        }
        if datum.embedding.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Provider("embedding has non-finite entries".into()));
        }
        Ok(EmbeddingVector(datum.embedding))
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn provider_id(&self) -> &str {
        &self.cfg.model
    }
}
