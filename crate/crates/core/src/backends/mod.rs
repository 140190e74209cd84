//! Uniform access to the three model capabilities the pipeline needs:
//! vision chat, text-to-image generation and text embedding.
//!
//! Every capability is a trait with an HTTP implementation for
//! OpenAI-compatible services ([`http`]) and in-process mocks ([`mock`],
//! plus the synthetic imager in [`crate::synthetic`]). Images cross module
//! boundaries only as [`ImageRef`] handles into the [`ArtifactStore`].

pub mod http;
pub mod mock;
pub mod store;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use store::ArtifactStore;

use crate::runlog::CallLog;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed reply after {attempts} attempt(s): {last_reply}")]
    MalformedReply { attempts: u32, last_reply: String },
    #[error("authentication rejected: {0}")]
    Auth(String),
    #[error("content rejected by endpoint: {0}")]
    ContentRejected(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("invalid request: {0}")]
    Precondition(String),
    #[error("artifact store: {0}")]
    Store(#[from] std::io::Error),
}

/// Which pipeline agent a chat request belongs to. Real endpoints only see
/// the rendered text; mocks dispatch on the role.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentRole {
    Decompose,
    Questions,
    Vqa,
    Caption,
    CompareCaption,
    Integrate,
    MapErrors,
    Refine,
    Merge,
    ScoreVqa,
    Rate,
    Summarize,
    Rewrite,
}

impl AgentRole {
    pub fn as_str(self) -> &'static str {
        match self {
            AgentRole::Decompose => "decompose",
            AgentRole::Questions => "questions",
            AgentRole::Vqa => "vqa",
            AgentRole::Caption => "caption",
            AgentRole::CompareCaption => "compare_caption",
            AgentRole::Integrate => "integrate",
            AgentRole::MapErrors => "map_errors",
            AgentRole::Refine => "refine",
            AgentRole::Merge => "merge",
            AgentRole::ScoreVqa => "score_vqa",
            AgentRole::Rate => "rate",
            AgentRole::Summarize => "summarize",
            AgentRole::Rewrite => "rewrite",
        }
    }
}

impl fmt::Display for AgentRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum UserPart {
    Text { text: String },
    Image { image: ImageRef },
}

impl UserPart {
    pub fn text(s: impl Into<String>) -> Self {
        UserPart::Text { text: s.into() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ResponseHint {
    FreeText,
    StrictJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub agent: AgentRole,
    pub system_text: String,
    pub user_parts: Vec<UserPart>,
    pub temperature: f32,
    pub max_tokens: u32,
    pub response_hint: ResponseHint,
    /// Structured inputs the templates were rendered from. Not sent over HTTP.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub context: Value,
}

impl ChatRequest {
    pub fn new(agent: AgentRole, system_text: impl Into<String>) -> Self {
        Self {
            agent,
            system_text: system_text.into(),
            user_parts: Vec::new(),
            temperature: 0.2,
            max_tokens: 2048,
            response_hint: ResponseHint::FreeText,
            context: Value::Null,
        }
    }

    pub fn text(mut self, text: impl Into<String>) -> Self {
        self.user_parts.push(UserPart::text(text));
        self
    }

    pub fn image(mut self, image: &ImageRef) -> Self {
        self.user_parts.push(UserPart::Image { image: image.clone() });
        self
    }

    pub fn json(mut self) -> Self {
        self.response_hint = ResponseHint::StrictJson;
        self
    }

    pub fn with_context(mut self, context: Value) -> Self {
        self.context = context;
        self
    }

    pub fn images(&self) -> impl Iterator<Item = &ImageRef> {
        self.user_parts.iter().filter_map(|p| match p {
            UserPart::Image { image } => Some(image),
            UserPart::Text { .. } => None,
        })
    }

    pub fn last_text(&self) -> Option<&str> {
        self.user_parts.iter().rev().find_map(|p| match p {
            UserPart::Text { text } => Some(text.as_str()),
            UserPart::Image { .. } => None,
        })
    }

    pub fn validate(&self, store: Option<&ArtifactStore>) -> Result<(), BackendError> {
        if self.user_parts.is_empty() {
            return Err(BackendError::Precondition("chat request has no user parts".into()));
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(BackendError::Precondition(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_tokens == 0 {
            return Err(BackendError::Precondition("max_tokens must be positive".into()));
        }
        if let Some(store) = store {
            for image in self.images() {
                if !store.contains(&image.content_hash) {
                    return Err(BackendError::Precondition(format!(
                        "image {} not in artifact store",
                        image.content_hash
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub usage: Usage,
    pub backend_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Http { prompt_id: String },
    Synthetic { prompt_id: String, scene_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub content_hash: String,
    pub media_type: String,
    pub byte_length: u64,
    pub provenance: Provenance,
}

impl ImageRef {
    pub fn scene_id(&self) -> Option<&str> {
        match &self.provenance {
            Provenance::Synthetic { scene_id, .. } => Some(scene_id),
            Provenance::Http { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub dim: usize,
    pub source_text_hash: String,
}

impl AsRef<[f64]> for EmbeddingVector {
    fn as_ref(&self) -> &[f64] {
        &self.values
    }
}

impl EmbeddingVector {
    pub fn new(values: Vec<f64>, source_text: &str) -> Self {
        Self {
            dim: values.len(),
            values,
            source_text_hash: crate::text::sha256_hex(source_text.as_bytes()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub multiplier: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, initial_backoff_ms: 500, multiplier: 2.0 }
    }
}

impl RetryPolicy {
    /// Delays slept between consecutive attempts: `max_attempts - 1` terms of
    /// a geometric sequence starting at `initial_backoff_ms`.
    pub fn backoff_schedule(&self) -> Vec<u64> {
        let mut delay = self.initial_backoff_ms as f64;
        (1..self.max_attempts)
            .map(|_| {
                let d = delay.round() as u64;
                delay *= self.multiplier;
                d
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendConfig {
    pub base_url: String,
    pub api_key_env: String,
    pub model_name: String,
    pub max_concurrency: usize,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            api_key_env: "OPENAI_API_KEY".into(),
            model_name: "mock".into(),
            max_concurrency: 4,
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
        }
    }
}

impl BackendConfig {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Precondition("retry.max_attempts must be >= 1".into()));
        }
        if self.retry.multiplier.is_nan() || self.retry.multiplier < 1.0 {
            return Err(BackendError::Precondition("retry.multiplier must be >= 1".into()));
        }
        if self.timeout_ms == 0 {
            return Err(BackendError::Precondition("timeout_ms must be > 0".into()));
        }
        if self.max_concurrency == 0 {
            return Err(BackendError::Precondition("max_concurrency must be > 0".into()));
        }
        Ok(())
    }
}

pub trait ChatBackend: Send + Sync {
    fn id(&self) -> &str;
    /// One round trip. Transport-level retries are the implementation's job;
    /// reply-format retries happen in [`chat`].
    fn complete(&self, request: &ChatRequest, config: &BackendConfig)
        -> Result<ChatResponse, BackendError>;
}

pub trait ImageBackend: Send + Sync {
    fn id(&self) -> &str;
    fn generate(&self, prompt: &str, seed: u64, config: &BackendConfig)
        -> Result<ImageRef, BackendError>;
}

pub trait EmbedBackend: Send + Sync {
    fn id(&self) -> &str;
    fn embed(&self, texts: &[String], config: &BackendConfig)
        -> Result<Vec<EmbeddingVector>, BackendError>;
}

const REASK_JSON: &str =
    "Your previous reply was not a single JSON object. Reply again with exactly one JSON object and nothing else.";

/// Remove a surrounding markdown code fence, if any.
pub fn strip_code_fences(text: &str) -> &str {
    let trimmed = text.trim();
    if let Some(rest) = trimmed.strip_prefix("```") {
        let rest = rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric());
        if let Some(body) = rest.trim_end().strip_suffix("```") {
            return body.trim();
        }
    }
    trimmed
}

/// Parse a reply as a single top-level JSON object.
pub fn parse_json_object(text: &str) -> Option<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(strip_code_fences(text)) {
        Ok(Value::Object(map)) => Some(map),
        _ => None,
    }
}

/// Send a chat request, enforcing `StrictJson` by re-asking up to
/// `config.retry.max_attempts` times. On success with `StrictJson` the
/// returned text is the fence-stripped JSON object.
pub fn chat(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    config: &BackendConfig,
) -> Result<ChatResponse, BackendError> {
    chat_observed(backend, request, config, &mut |_, _| {})
}

pub(crate) fn chat_observed(
    backend: &dyn ChatBackend,
    request: &ChatRequest,
    config: &BackendConfig,
    observe: &mut dyn FnMut(&ChatRequest, &ChatResponse),
) -> Result<ChatResponse, BackendError> {
    config.validate()?;
    request.validate(None)?;
    let mut current = request.clone();
    let mut last_reply = String::new();
    for attempt in 1..=config.retry.max_attempts {
        let mut response = backend.complete(&current, config)?;
        observe(&current, &response);
        match request.response_hint {
            ResponseHint::FreeText if !response.text.trim().is_empty() => return Ok(response),
            ResponseHint::FreeText => {}
            ResponseHint::StrictJson => {
                if parse_json_object(&response.text).is_some() {
                    response.text = strip_code_fences(&response.text).to_string();
                    return Ok(response);
                }
            }
        }
        last_reply = response.text;
        if attempt < config.retry.max_attempts {
            current.user_parts.push(UserPart::text(REASK_JSON));
        }
    }
    Err(BackendError::MalformedReply { attempts: config.retry.max_attempts, last_reply })
}

/// Generate an image, guarding the non-empty-prompt precondition.
pub fn generate_image(
    backend: &dyn ImageBackend,
    prompt: &str,
    seed: u64,
    config: &BackendConfig,
) -> Result<ImageRef, BackendError> {
    if prompt.trim().is_empty() {
        return Err(BackendError::Precondition("prompt must be non-empty".into()));
    }
    backend.generate(prompt, seed, config)
}

/// Embed texts, guarding preconditions and checking the output shape.
pub fn embed(
    backend: &dyn EmbedBackend,
    texts: &[String],
    config: &BackendConfig,
) -> Result<Vec<EmbeddingVector>, BackendError> {
    if texts.is_empty() {
        return Err(BackendError::Precondition("no texts to embed".into()));
    }
    if texts.iter().any(|t| t.trim().is_empty()) {
        return Err(BackendError::Precondition("cannot embed an empty text".into()));
    }
    let vectors = backend.embed(texts, config)?;
    if vectors.len() != texts.len() {
        return Err(BackendError::Transport(format!(
            "expected {} embeddings, got {}",
            texts.len(),
            vectors.len()
        )));
    }
    let dim = vectors[0].values.len();
    for v in &vectors {
        if v.values.len() != dim || v.dim != v.values.len() {
            return Err(BackendError::DimMismatch { expected: dim, got: v.values.len() });
        }
        if v.values.iter().any(|x| !x.is_finite()) {
            return Err(BackendError::Transport("non-finite embedding component".into()));
        }
    }
    Ok(vectors)
}

/// The handles one pipeline run works with.
#[derive(Clone)]
pub struct Backends {
    pub chat: Arc<dyn ChatBackend>,
    pub chat_config: BackendConfig,
    pub t2i: Arc<dyn ImageBackend>,
    pub t2i_config: BackendConfig,
    pub embed: Arc<dyn EmbedBackend>,
    pub embed_config: BackendConfig,
    pub store: Arc<ArtifactStore>,
    pub calls: Arc<CallLog>,
}

impl Backends {
    /// Bundle backends with default configs and a fresh call log.
    pub fn new(
        chat: Arc<dyn ChatBackend>,
        t2i: Arc<dyn ImageBackend>,
        embed: Arc<dyn EmbedBackend>,
        store: Arc<ArtifactStore>,
    ) -> Self {
        Self {
            chat,
            chat_config: BackendConfig::default(),
            t2i,
            t2i_config: BackendConfig::default(),
            embed,
            embed_config: BackendConfig::default(),
            store,
            calls: Arc::new(CallLog::new()),
        }
    }

    pub fn chat(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        request.validate(Some(&self.store))?;
        let calls = &self.calls;
        chat_observed(self.chat.as_ref(), request, &self.chat_config, &mut |req, resp| {
            calls.record_chat(req, resp)
        })
    }

    pub fn generate_image(&self, prompt: &str, seed: u64) -> Result<ImageRef, BackendError> {
        let image = generate_image(self.t2i.as_ref(), prompt, seed, &self.t2i_config)?;
        self.calls.record_image(prompt, seed, &image);
        Ok(image)
    }

    pub fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        let vectors = embed(self.embed.as_ref(), texts, &self.embed_config)?;
        self.calls.record_embed(texts.len());
        Ok(vectors)
    }

    pub fn chat_calls(&self) -> u64 {
        self.calls.chat_calls()
    }
}

#[cfg(test)]
mod tests {
    use super::mock::ScriptedChat;
    use super::*;

    fn config(max_attempts: u32) -> BackendConfig {
        BackendConfig {
            retry: RetryPolicy { max_attempts, initial_backoff_ms: 1, multiplier: 2.0 },
            ..BackendConfig::default()
        }
    }

    fn request(text: &str) -> ChatRequest {
        ChatRequest::new(AgentRole::Caption, "system").text(text)
    }

    #[test]
    fn echo_mock_returns_last_user_text() {
        let chat_backend = ScriptedChat::echo();
        let resp = chat(&chat_backend, &request("ping"), &config(1)).unwrap();
        assert_eq!(resp.text, "ping");
    }

    #[test]
    fn strict_json_succeeds_on_second_attempt() {
        let chat_backend = ScriptedChat::sequence(["not json", "{\"a\":1}"]);
        let resp = chat(&chat_backend, &request("x").json(), &config(2)).unwrap();
        assert_eq!(resp.text, "{\"a\":1}");
        assert_eq!(chat_backend.calls(), 2);
    }

    #[test]
    fn strict_json_exhaustion_is_malformed_reply() {
        let chat_backend = ScriptedChat::always("not json");
        let err = chat(&chat_backend, &request("x").json(), &config(3)).unwrap_err();
        assert!(matches!(err, BackendError::MalformedReply { attempts: 3, .. }));
        assert_eq!(chat_backend.calls(), 3);
    }

    #[test]
    fn strict_json_strips_fences() {
        let chat_backend = ScriptedChat::always("```json\n{\"ok\": true}\n```");
        let resp = chat(&chat_backend, &request("x").json(), &config(1)).unwrap();
        assert_eq!(resp.text, "{\"ok\": true}");
    }

    #[test]
    fn top_level_array_is_not_an_object() {
        assert!(parse_json_object("[1,2]").is_none());
        assert!(parse_json_object("{\"a\":[1]}").is_some());
    }

    #[test]
    fn request_without_parts_is_rejected() {
        let req = ChatRequest::new(AgentRole::Caption, "s");
        assert!(matches!(req.validate(None), Err(BackendError::Precondition(_))));
    }

    #[test]
    fn backoff_is_geometric() {
        let policy = RetryPolicy { max_attempts: 4, initial_backoff_ms: 100, multiplier: 3.0 };
        assert_eq!(policy.backoff_schedule(), vec![100, 300, 900]);
        assert!(RetryPolicy { max_attempts: 1, ..policy }.backoff_schedule().is_empty());
    }

    #[test]
    fn config_guards() {
        let mut c = BackendConfig::default();
        c.retry.multiplier = 0.5;
        assert!(c.validate().is_err());
        let mut c = BackendConfig::default();
        c.retry.max_attempts = 0;
        assert!(c.validate().is_err());
    }

    proptest::proptest! {
        #[test]
        fn backoff_ratio_matches_multiplier(
            attempts in 2u32..8, initial in 1u64..1000, mult in 1.0f64..4.0
        ) {
            let policy = RetryPolicy { max_attempts: attempts, initial_backoff_ms: initial, multiplier: mult };
            let s = policy.backoff_schedule();
            proptest::prop_assert_eq!(s.len() as u32, attempts - 1);
            for (i, d) in s.iter().enumerate() {
                let expected = initial as f64 * mult.powi(i as i32);
                proptest::prop_assert!((*d as f64 - expected).abs() <= 0.5 + 1e-9 * expected);
            }
        }
    }
}
