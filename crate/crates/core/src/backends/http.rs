//! Blocking HTTP clients for OpenAI-compatible endpoints.

use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine as _;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    ArtifactStore, BackendConfig, BackendError, ChatBackend, ChatRequest, ChatResponse,
    EmbedBackend, EmbeddingVector, ImageBackend, ImageRef, Provenance, Usage, UserPart,
};
use crate::text::sha256_hex;

/// Counting semaphore bounding in-flight requests.
#[derive(Debug)]
pub struct Semaphore {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub struct Permit<'a> {
    sem: &'a Semaphore,
}

impl Semaphore {
    pub fn new(permits: usize) -> Self {
        Self { permits: Mutex::new(permits.max(1)), freed: Condvar::new() }
    }

    pub fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().expect("semaphore poisoned");
        while *n == 0 {
            n = self.freed.wait(n).expect("semaphore poisoned");
        }
        *n -= 1;
        Permit { sem: self }
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.sem.permits.lock().expect("semaphore poisoned") += 1;
        self.sem.freed.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Fatal(BackendError),
}

struct HttpCore {
    client: Client,
    sem: Semaphore,
}

impl HttpCore {
    fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let client = Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        Ok(Self { client, sem: Semaphore::new(config.max_concurrency) })
    }

    fn post_json(
        &self,
        url: &str,
        body: &Value,
        config: &BackendConfig,
    ) -> Result<Value, BackendError> {
        config.validate()?;
        let key = std::env::var(&config.api_key_env).ok().filter(|k| !k.is_empty());
        let schedule = config.retry.backoff_schedule();
        let mut last = String::new();
        for attempt in 0..config.retry.max_attempts as usize {
            let outcome = {
                let _permit = self.sem.acquire();
                self.send_once(url, body, key.as_deref())
            };
            match outcome {
                Ok(v) => return Ok(v),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    tracing::warn!(url, attempt, "request failed: {msg}");
                    last = msg;
                    if let Some(delay) = schedule.get(attempt) {
                        std::thread::sleep(Duration::from_millis(*delay));
                    }
                }
            }
        }
        Err(BackendError::Transport(format!(
            "{} attempt(s) exhausted: {last}",
            config.retry.max_attempts
        )))
    }

    fn send_once(&self, url: &str, body: &Value, key: Option<&str>) -> Result<Value, Failure> {
        let mut req = self.client.post(url).json(body);
        if let Some(key) = key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| Failure::Retryable(e.to_string()))?;
        match status {
            s if s.is_success() => serde_json::from_str(&text)
                .map_err(|e| Failure::Retryable(format!("invalid JSON body: {e}"))),
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => {
                Err(Failure::Fatal(BackendError::Auth(format!("{status}: {text}"))))
            }
            StatusCode::TOO_MANY_REQUESTS => Err(Failure::Retryable(format!("{status}: {text}"))),
            s if s.is_server_error() => Err(Failure::Retryable(format!("{status}: {text}"))),
            s if text.contains("content_policy") || text.contains("safety") => Err(Failure::Fatal(
                BackendError::ContentRejected(format!("{s}: {text}")),
            )),
            s => Err(Failure::Fatal(BackendError::Transport(format!("{s}: {text}")))),
        }
    }
}

fn endpoint(base: &str, path: &str) -> String {
    format!("{}/{}", base.trim_end_matches('/'), path)
}

/// Vision chat over `POST {base_url}/chat/completions`.
pub struct HttpChat {
    core: HttpCore,
    store: Arc<ArtifactStore>,
}

impl HttpChat {
    pub fn new(config: &BackendConfig, store: Arc<ArtifactStore>) -> Result<Self, BackendError> {
        Ok(Self { core: HttpCore::new(config)?, store })
    }

    /// The OpenAI-compatible body, images inlined as base64 data URIs.
    pub fn request_body(
        &self,
        request: &ChatRequest,
        config: &BackendConfig,
    ) -> Result<Value, BackendError> {
        let mut content = Vec::with_capacity(request.user_parts.len());
        for part in &request.user_parts {
            match part {
                UserPart::Text { text } => content.push(json!({"type": "text", "text": text})),
                UserPart::Image { image } => {
                    let bytes = self.store.resolve(image)?;
                    let uri = format!("data:{};base64,{}", image.media_type, BASE64.encode(bytes));
                    content.push(json!({"type": "image_url", "image_url": {"url": uri}}));
                }
            }
        }
        Ok(json!({
            "model": config.model_name,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }))
    }
}

impl ChatBackend for HttpChat {
    fn id(&self) -> &str {
        "http-chat"
    }

    fn complete(
        &self,
        request: &ChatRequest,
        config: &BackendConfig,
    ) -> Result<ChatResponse, BackendError> {
        let body = self.request_body(request, config)?;
        let reply = self.core.post_json(&endpoint(&config.base_url, "chat/completions"), &body, config)?;
        let text = reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Transport("reply lacks choices[0].message.content".into()))?
            .to_string();
        let usage = Usage {
            prompt_tokens: reply.pointer("/usage/prompt_tokens").and_then(Value::as_u64).unwrap_or(0),
            completion_tokens: reply
                .pointer("/usage/completion_tokens")
                .and_then(Value::as_u64)
                .unwrap_or(0),
        };
        Ok(ChatResponse { text, usage, backend_id: format!("http:{}", config.model_name) })
    }
}

/// Embeddings over `POST {base_url}/embeddings`.
pub struct HttpEmbedder {
    core: HttpCore,
}

impl HttpEmbedder {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        Ok(Self { core: HttpCore::new(config)? })
    }
}

impl EmbedBackend for HttpEmbedder {
    fn id(&self) -> &str {
        "http-embed"
    }

    fn embed(
        &self,
        texts: &[String],
        config: &BackendConfig,
    ) -> Result<Vec<EmbeddingVector>, BackendError> {
        let body = json!({"model": config.model_name, "input": texts});
        let reply = self.core.post_json(&endpoint(&config.base_url, "embeddings"), &body, config)?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| BackendError::Transport("reply lacks data[]".into()))?;
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::with_capacity(data.len());
        for (pos, item) in data.iter().enumerate() {
            let index = item.get("index").and_then(Value::as_u64).map_or(pos, |i| i as usize);
            let values = item
                .get("embedding")
                .and_then(Value::as_array)
                .ok_or_else(|| BackendError::Transport("item lacks embedding".into()))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| BackendError::Transport("non-numeric".into())))
                .collect::<Result<Vec<_>, _>>()?;
            rows.push((index, values));
        }
        rows.sort_by_key(|(i, _)| *i);
        let dim = rows.first().map_or(0, |(_, v)| v.len());
        if let Some((_, bad)) = rows.iter().find(|(_, v)| v.len() != dim) {
            return Err(BackendError::DimMismatch { expected: dim, got: bad.len() });
        }
        Ok(rows
            .into_iter()
            .zip(texts)
            .map(|((_, v), t)| EmbeddingVector::new(v, t))
            .collect())
    }
}

/// How text-to-image requests are shaped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "style", rename_all = "snake_case")]
pub enum ImageEndpoint {
    /// `POST {base_url}/images/generations`, reading `data[0].b64_json`.
    #[default]
    OpenAi,
    /// User-supplied URL and JSON body; `prompt_field` (dotted path) receives
    /// the prompt, `seed_field` the seed, and `response_path` (dotted path,
    /// numeric segments index arrays) locates the base64 bytes.
    Template {
        url: String,
        body: Value,
        prompt_field: String,
        #[serde(default)]
        seed_field: Option<String>,
        response_path: String,
    },
}


fn set_path(target: &mut Value, path: &str, value: Value) {
    let mut cur = target;
    let segments: Vec<&str> = path.split('.').collect();
    for (i, seg) in segments.iter().enumerate() {
        if i + 1 == segments.len() {
            if let Value::Object(map) = cur {
                map.insert((*seg).to_string(), value);
            }
            return;
        }
        if !cur.get(*seg).is_some_and(Value::is_object) {
            if let Value::Object(map) = cur {
                map.insert((*seg).to_string(), json!({}));
            }
        }
        cur = cur.get_mut(*seg).expect("inserted above");
    }
}

fn get_path<'a>(value: &'a Value, path: &str) -> Option<&'a Value> {
    path.split('.').try_fold(value, |cur, seg| match seg.parse::<usize>() {
        Ok(i) => cur.get(i),
        Err(_) => cur.get(seg),
    })
}

pub struct HttpImager {
    core: HttpCore,
    endpoint: ImageEndpoint,
    store: Arc<ArtifactStore>,
}

impl HttpImager {
    pub fn new(
        config: &BackendConfig,
        endpoint: ImageEndpoint,
        store: Arc<ArtifactStore>,
    ) -> Result<Self, BackendError> {
        Ok(Self { core: HttpCore::new(config)?, endpoint, store })
    }

    pub fn request(&self, prompt: &str, seed: u64, config: &BackendConfig) -> (String, Value, String) {
        match &self.endpoint {
            ImageEndpoint::OpenAi => (
                endpoint(&config.base_url, "images/generations"),
                json!({
                    "model": config.model_name,
                    "prompt": prompt,
                    "n": 1,
                    "response_format": "b64_json",
                }),
                "data.0.b64_json".to_string(),
            ),
            ImageEndpoint::Template { url, body, prompt_field, seed_field, response_path } => {
                let mut body = body.clone();
                set_path(&mut body, prompt_field, json!(prompt));
                if let Some(field) = seed_field {
                    set_path(&mut body, field, json!(seed));
                }
                (url.clone(), body, response_path.clone())
            }
        }
    }
}

impl ImageBackend for HttpImager {
    fn id(&self) -> &str {
        "http-t2i"
    }

    fn generate(
        &self,
        prompt: &str,
        seed: u64,
        config: &BackendConfig,
    ) -> Result<ImageRef, BackendError> {
        let (url, body, path) = self.request(prompt, seed, config);
        let reply = self.core.post_json(&url, &body, config)?;
        let b64 = get_path(&reply, &path)
            .and_then(Value::as_str)
            .ok_or_else(|| BackendError::Transport(format!("reply lacks {path}")))?;
        let bytes = BASE64
            .decode(b64.trim())
            .map_err(|e| BackendError::Transport(format!("bad base64 image: {e}")))?;
        let media_type = if bytes.starts_with(&[0x89, b'P', b'N', b'G']) {
            "image/png"
        } else if bytes.starts_with(&[0xff, 0xd8]) {
            "image/jpeg"
        } else {
            "application/octet-stream"
        };
        let prompt_id = sha256_hex(prompt.as_bytes())[..16].to_string();
        Ok(self.store.put(bytes, media_type, Provenance::Http { prompt_id })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn semaphore_bounds_concurrency() {
        let sem = Arc::new(Semaphore::new(2));
        let active = Arc::new(AtomicUsize::new(0));
        let peak = Arc::new(AtomicUsize::new(0));
        let handles: Vec<_> = (0..8)
            .map(|_| {
                let (sem, active, peak) = (sem.clone(), active.clone(), peak.clone());
                std::thread::spawn(move || {
                    let _p = sem.acquire();
                    let now = active.fetch_add(1, Ordering::SeqCst) + 1;
                    peak.fetch_max(now, Ordering::SeqCst);
                    std::thread::sleep(Duration::from_millis(10));
                    active.fetch_sub(1, Ordering::SeqCst);
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert!(peak.load(Ordering::SeqCst) <= 2);
    }

    #[test]
    fn template_paths() {
        let mut body = json!({"input": {"steps": 4}});
        set_path(&mut body, "input.prompt", json!("a cat"));
        assert_eq!(body, json!({"input": {"steps": 4, "prompt": "a cat"}}));
        let reply = json!({"output": [{"image": "AAA"}]});
        assert_eq!(get_path(&reply, "output.0.image"), Some(&json!("AAA")));
    }
}
