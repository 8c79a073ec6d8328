//! OpenAI-style chat-completion and embedding adapters.

use std::time::Duration;

use serde_json::{json, Value};

use super::embed::normalize;
use super::{Backend, BackendError, ClientConfig, Embedder, FinishReason, GenerationRequest, GenerationResponse, LlmError};

pub struct ChatCompletionBackend {
    http: reqwest::blocking::Client,
    base_url: String,
    model: String,
    api_key: Option<String>,
}

impl ChatCompletionBackend {
    pub fn new(base_url: &str, model: &str, api_key: Option<String>, timeout: Duration) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| LlmError::InvalidRequest(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            http,
            base_url: base_url.trim_end_matches('/').to_string(),
            model: model.to_string(),
            api_key,
        })
    }

    /// Builds the backend from config, reading the key from `api_key_env`.
    pub fn from_config(config: &ClientConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        Self::new(&config.base_url, &config.model, key, Duration::from_secs(config.timeout_secs))
    }

    fn post(&self, path: &str, body: &Value) -> Result<Value, BackendError> {
        let mut req = self.http.post(format!("{}/{path}", self.base_url)).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 {
            let retry_after = resp
                .headers()
                .get("retry-after")
                .and_then(|v| v.to_str().ok())
                .and_then(|v| v.trim().parse::<u64>().ok())
                .map(Duration::from_secs);
            return Err(BackendError::RateLimited { retry_after });
        }
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { code: status, body: text });
        }
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed(e.to_string()))
    }
}

/// Request body for `POST {base}/chat/completions`.
pub fn chat_body(model: &str, request: &GenerationRequest) -> Value {
    let mut body = json!({
        "model": model,
        "messages": [{"role": "user", "content": request.prompt}],
        "max_tokens": request.max_output_tokens,
        "temperature": request.temperature,
    });
    if !request.stop_sequences.is_empty() {
        body["stop"] = json!(request.stop_sequences);
    }
    body
}

/// Extracts the first choice of a chat-completion response.
pub fn parse_chat_response(value: &Value) -> Result<GenerationResponse, BackendError> {
    let choice = value
        .get("choices")
        .and_then(|c| c.get(0))
        .ok_or_else(|| BackendError::Malformed("missing choices[0]".into()))?;
    let text = choice
        .pointer("/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?;
    let finish_reason = match choice.get("finish_reason").and_then(Value::as_str) {
        Some("length") => FinishReason::Length,
        Some("stop") | None => FinishReason::Stop,
        Some(_) => FinishReason::Error,
    };
    Ok(GenerationResponse {
        text: text.to_string(),
        finish_reason,
        latency_ms: 0,
    })
}

impl Backend for ChatCompletionBackend {
    fn complete(&self, request: &GenerationRequest) -> Result<GenerationResponse, BackendError> {
        let value = self.post("chat/completions", &chat_body(&self.model, request))?;
        parse_chat_response(&value)
    }
}

/// Remote embeddings via `POST {base}/embeddings`; outputs are renormalized.
pub struct HttpEmbedder {
    backend: ChatCompletionBackend,
}

impl HttpEmbedder {
    pub fn from_config(config: &ClientConfig) -> Result<Self, LlmError> {
        let mut backend = ChatCompletionBackend::from_config(config)?;
        if let Some(model) = &config.embedding_model {
            backend.model = model.clone();
        }
        Ok(Self { backend })
    }
}

impl Embedder for HttpEmbedder {
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, LlmError> {
        if texts.is_empty() {
            return Err(LlmError::EmbeddingFailed("no texts to embed".into()));
        }
        let body = json!({"model": self.backend.model, "input": texts});
        let value = self
            .backend
            .post("embeddings", &body)
            .map_err(|e| LlmError::EmbeddingFailed(e.to_string()))?;
        let data = value
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| LlmError::EmbeddingFailed("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(LlmError::EmbeddingFailed(format!("expected {} vectors, got {}", texts.len(), data.len())));
        }
        let mut out = Vec::with_capacity(data.len());
        for item in data {
            let mut v: Vec<f64> = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| LlmError::EmbeddingFailed("missing embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| LlmError::EmbeddingFailed("non-numeric component".into())))
                .collect::<Result<_, _>>()?;
            if v.iter().all(|x| *x == 0.0) {
                return Err(LlmError::EmbeddingFailed("zero vector".into()));
            }
            normalize(&mut v);
            out.push(v);
        }
        if out.windows(2).any(|w| w[0].len() != w[1].len()) {
            return Err(LlmError::EmbeddingFailed("vectors differ in dimension".into()));
        }
        Ok(out)
    }
}
