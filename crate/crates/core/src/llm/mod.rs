//! Generation and embedding services used by every pipeline stage.
//!
//! Stages talk to a [`GenerationClient`], which wraps any [`Backend`] with
//! retry/backoff, an in-flight limit and an audit log. Backends include an
//! OpenAI-style chat-completion adapter ([`http::ChatCompletionBackend`]),
//! a fixture-driven [`mock::MockBackend`] and a scripted backend for tests.

pub mod client;
pub mod embed;
pub mod http;
pub mod mock;
pub mod offline;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use client::{map_bounded, AuditEntry, CallRecord, GenerationClient, RetryPolicy};
pub use embed::{Embedder, TfIdfEmbedder};
pub use mock::{MockBackend, ScriptedBackend};
pub use offline::OfflineResponder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestTag {
    Title,
    Structure,
    QaSynthesis,
    Explanation,
}

impl RequestTag {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestTag::Title => "title",
            RequestTag::Structure => "structure",
            RequestTag::QaSynthesis => "qa_synthesis",
            RequestTag::Explanation => "explanation",
        }
    }

    /// Structuring-style tasks decode greedily, synthesis samples.
    pub fn default_temperature(self) -> f64 {
        match self {
            RequestTag::Title | RequestTag::Structure => 0.0,
            RequestTag::QaSynthesis | RequestTag::Explanation => 0.7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    #[serde(default)]
    pub stop_sequences: Vec<String>,
    pub request_tag: RequestTag,
}

impl GenerationRequest {
    pub fn new(tag: RequestTag, prompt: impl Into<String>) -> Self {
        let max_output_tokens = match tag {
            RequestTag::Title => 64,
            RequestTag::Structure => 4096,
            RequestTag::QaSynthesis | RequestTag::Explanation => 1024,
        };
        Self {
            prompt: prompt.into(),
            max_output_tokens,
            temperature: tag.default_temperature(),
            stop_sequences: Vec::new(),
            request_tag: tag,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResponse {
    pub text: String,
    pub finish_reason: FinishReason,
    pub latency_ms: u64,
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("generation failed after {attempts} attempt(s): {reason}")]
    GenerationFailed { attempts: u32, reason: String },
    #[error("embedding failed: {0}")]
    EmbeddingFailed(String),
}

/// Failure of a single backend attempt.
#[derive(Debug, Clone, Error)]
pub enum BackendError {
    #[error("rate limited")]
    RateLimited { retry_after: Option<Duration> },
    #[error("HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("no canned response for prompt {0}")]
    NoFixture(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::RateLimited { .. } | BackendError::Transport(_) | BackendError::Malformed(_) => true,
            BackendError::Status { code, .. } => *code == 408 || *code >= 500,
            BackendError::NoFixture(_) => false,
        }
    }
}

pub trait Backend: Send + Sync {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError>;
}

/// Hex SHA-256 of a prompt; the key for mock fixtures and the audit log.
pub fn prompt_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

/// Remote backend settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key.
    pub api_key_env: String,
    pub timeout_secs: u64,
    pub retries: u32,
    pub concurrency: usize,
    /// Directory of `<prompt_hash>.txt` fixtures used by the mock backend.
    pub mock_dir: Option<String>,
    pub embedding_model: Option<String>,
}

impl Default for ClientConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model: "default".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            retries: 3,
            concurrency: 4,
            mock_dir: None,
            embedding_model: None,
        }
    }
}
