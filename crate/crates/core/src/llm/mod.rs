//! The single abstraction every component uses to talk to a language model:
//! chat completion plus embedding. Ships a deterministic scripted mock for
//! offline runs and an OpenAI-compatible remote client for live runs.

mod hash_embed;
mod mock;
mod remote;
pub mod testing;

pub use hash_embed::{HashEmbedder, DEFAULT_DIMENSION as HASH_EMBED_DIMENSION};
pub use mock::{MockChatBackend, ScriptRule, Transcript, TranscriptEntry};
pub use remote::{RemoteChatBackend, RemoteConfig, RemoteEmbedBackend};

use serde::{Deserialize, Serialize};
use std::sync::Arc;
use thiserror::Error;

/// Chat completion request. Defaults are deterministic decoding:
/// temperature 0 with a fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    pub seed: u64,
    pub max_tokens: u32,
    /// Image file references attached to the request; only honored by
    /// backends that report `supports_images()`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub images: Vec<String>,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            seed: 0,
            max_tokens: 1024,
            images: Vec::new(),
        }
    }

    pub fn with_images(mut self, images: Vec<String>) -> Self {
        self.images = images;
        self
    }

    /// The text a scripted mock matches rules against: system and user
    /// prompts joined by a newline.
    pub fn match_text(&self) -> String {
        format!("{}\n{}", self.system_prompt, self.user_prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Fixed-dimension embedding vector with finite entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Backend failures, kept distinguishable so the executor can treat
/// transport/provider errors as "invalid result" while configuration
/// errors stay fatal.
#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),

    #[error("request timed out: {0}")]
    Timeout(String),

    #[error("provider error: {0}")]
    Provider(String),

    /// The scripted mock had no matching rule and no default; tests fail
    /// loudly on prompt drift instead of silently echoing.
    #[error("no scripted reply matches the prompt: {0}")]
    ScriptMiss(String),

    #[error("backend misconfigured: {0}")]
    Config(String),

    #[error("empty input: {0}")]
    EmptyInput(String),
}

impl BackendError {
    /// Transport-level failures are retried once; provider refusals never.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_) | BackendError::Timeout(_))
    }
}

/// Chat-completion capable backend. Implementations must tolerate
/// concurrent in-flight requests up to the configured parallelism bound.
pub trait ChatBackend: Send + Sync {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError>;

    /// Whether the backend can consume image payloads; callers substitute
    /// captions when this is false.
    fn supports_images(&self) -> bool {
        false
    }
}

/// Embedding provider. All vectors from one provider share a dimension and
/// are deterministic per (provider, text).
pub trait EmbedBackend: Send + Sync {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError>;
    fn dimension(&self) -> usize;
    fn provider_id(&self) -> &str;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn chat(&self, req: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).chat(req)
    }
    fn supports_images(&self) -> bool {
        (**self).supports_images()
    }
}

impl<T: EmbedBackend + ?Sized> EmbedBackend for Arc<T> {
    fn embed(&self, text: &str) -> Result<EmbeddingVector, BackendError> {
        (**self).embed(text)
    }
    fn dimension(&self) -> usize {
        (**self).dimension()
    }
    fn provider_id(&self) -> &str {
        (**self).provider_id()
    }
}
