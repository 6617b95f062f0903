//! HTTP clients for the hosted multimodal model and embedding endpoint.
//!
//! Both use blocking reqwest and are meant to run off the async runtime
//! (the service calls them from `spawn_blocking`). Throttling (429) and
//! server errors are retried with exponential backoff; missing or rejected
//! credentials surface as "unavailable" errors.

use std::thread;

use base64::Engine;
use serde_json::{json, Value};

use screenrec_core::rerank::{EmbeddingProvider, EmbeddingVector, RerankError};
use screenrec_core::screenshots::ScreenshotStore;
use screenrec_core::session::ScreenshotRef;
use screenrec_core::summarizer::{BackendIdentity, PromptSpec, SummarizerBackend, SummarizerError};

use crate::config::{Config, RetryPolicy};

#[derive(Debug)]
enum CallError {
    Unavailable(String),
    Failed(String),
}

fn post_json(url: &str, key: &str, body: &Value, retry: RetryPolicy) -> Result<Value, CallError> {
    // built per call so it is never dropped inside an async context
    let client = reqwest::blocking::Client::builder().build().map_err(|e| CallError::Unavailable(e.to_string()))?;
    let mut last = String::new();
    for attempt in 0..retry.max_tries.max(1) {
        match client.post(url).bearer_auth(key).json(body).send() {
            Err(e) => last = format!("request failed: {e}"),
            Ok(resp) => {
                let status = resp.status();
                if status.as_u16() == 429 || status.is_server_error() {
                    last = format!("endpoint answered {status}");
                } else if status.as_u16() == 401 || status.as_u16() == 403 {
                    return Err(CallError::Unavailable(format!("credential rejected ({status})")));
                } else if !status.is_success() {
                    let text = resp.text().unwrap_or_default();
                    return Err(CallError::Failed(format!("endpoint answered {status}: {text}")));
                } else {
                    return resp.json::<Value>().map_err(|e| CallError::Failed(format!("response is not JSON: {e}")));
                }
            }
        }
        if attempt + 1 < retry.max_tries {
            let delay = retry.delay(attempt);
            tracing::warn!(attempt = attempt + 1, ?delay, reason = %last, "retrying");
            thread::sleep(delay);
        }
    }
    Err(CallError::Unavailable(format!("gave up after {} tries: {last}", retry.max_tries)))
}

/// Chat-completions style endpoint that accepts text plus inline images.
pub struct LiveBackend {
    url: String,
    model: String,
    key: Option<String>,
    screenshots: ScreenshotStore,
    retry: RetryPolicy,
}

impl LiveBackend {
    pub fn new(url: String, model: String, key: Option<String>, screenshots: ScreenshotStore, retry: RetryPolicy) -> Self {
        LiveBackend { url, model, key, screenshots, retry }
    }

    pub fn from_config(config: &Config, screenshots: ScreenshotStore) -> Self {
        Self::new(config.mllm_url.clone(), config.mllm_model.clone(), config.mllm_key.clone(), screenshots, config.retry)
    }

    fn request_body(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<Value, SummarizerError> {
        let mut content = vec![json!({"type": "text", "text": prompt.instruction_text})];
        for shot in batch {
            let bytes = self
                .screenshots
                .read(&shot.key)
                .map_err(|e| SummarizerError::Backend(format!("screenshot `{}`: {e}", shot.key)))?;
            let data = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({"type": "image_url", "image_url": {"url": format!("data:image/png;base64,{data}")}}));
        }
        Ok(json!({"model": self.model, "messages": [{"role": "user", "content": content}]}))
    }
}

impl SummarizerBackend for LiveBackend {
    fn identity(&self) -> BackendIdentity {
        BackendIdentity::Live
    }

    fn summarize_batch(&self, prompt: &PromptSpec, batch: &[ScreenshotRef]) -> Result<String, SummarizerError> {
        let key = self.key.as_deref().ok_or_else(|| SummarizerError::BackendUnavailable("SCREENREC_MLLM_KEY is not set".into()))?;
        let body = self.request_body(prompt, batch)?;
        let reply = post_json(&self.url, key, &body, self.retry).map_err(|e| match e {
            CallError::Unavailable(m) => SummarizerError::BackendUnavailable(m),
            CallError::Failed(m) => SummarizerError::Backend(m),
        })?;
        reply["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| SummarizerError::Backend("reply has no choices[0].message.content".into()))
    }
}

/// Text-embedding endpoint. Accepts `{"data":[{"embedding":[..]}]}` or
/// `{"embedding":[..]}` replies; vectors are rescaled to unit length.
pub struct LiveEmbedder {
    url: String,
    key: Option<String>,
    retry: RetryPolicy,
}

impl LiveEmbedder {
    pub fn new(url: String, key: Option<String>, retry: RetryPolicy) -> Self {
        LiveEmbedder { url, key, retry }
    }
}

impl EmbeddingProvider for LiveEmbedder {
    fn id(&self) -> String {
        format!("live:{}", self.url)
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, RerankError> {
        let key = self.key.as_deref().ok_or_else(|| RerankError::ProviderUnavailable("SCREENREC_EMBED_KEY is not set".into()))?;
        let reply = post_json(&self.url, key, &json!({"input": text}), self.retry).map_err(|e| match e {
            CallError::Unavailable(m) | CallError::Failed(m) => RerankError::ProviderUnavailable(m),
        })?;
        let values = reply["data"][0]["embedding"]
            .as_array()
            .or_else(|| reply["embedding"].as_array())
            .ok_or_else(|| RerankError::InvalidVector("reply carries no embedding".into()))?
            .iter()
            .map(|v| v.as_f64().ok_or_else(|| RerankError::InvalidVector("non-numeric component".into())))
            .collect::<Result<Vec<f64>, _>>()?;
        EmbeddingVector::normalized(values)
    }
}
