//! In-process test doubles: a scripted chat backend, a hashing embedder and
//! a placeholder imager. All are deterministic.

use std::collections::{HashMap, VecDeque};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use super::{
    AgentRole, ArtifactStore, BackendConfig, BackendError, ChatBackend, ChatRequest,
    ChatResponse, EmbedBackend, EmbeddingVector, ImageBackend, ImageRef, Provenance, Usage,
};
use crate::text::{sha256_hex, stable_hash, tokens};

#[derive(Debug, Clone)]
enum Fallback {
    Echo,
    Always(String),
    Exhausted,
}

/// Chat backend that replays scripted replies.
///
/// Replies are taken from the per-role queue first, then the shared queue.
/// When both are empty the fallback applies (echo, a constant reply, or a
/// transport error).
#[derive(Debug)]
pub struct ScriptedChat {
    by_role: Mutex<HashMap<AgentRole, VecDeque<String>>>,
    shared: Mutex<VecDeque<String>>,
    fallback: Fallback,
    calls: AtomicU64,
    seen: Mutex<Vec<ChatRequest>>,
}

impl ScriptedChat {
    fn with_fallback(fallback: Fallback) -> Self {
        Self {
            by_role: Mutex::default(),
            shared: Mutex::default(),
            fallback,
            calls: AtomicU64::new(0),
            seen: Mutex::default(),
        }
    }

    pub fn echo() -> Self {
        Self::with_fallback(Fallback::Echo)
    }

    pub fn always(text: impl Into<String>) -> Self {
        Self::with_fallback(Fallback::Always(text.into()))
    }

    pub fn sequence<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let this = Self::with_fallback(Fallback::Exhausted);
        this.shared.lock().unwrap().extend(replies.into_iter().map(Into::into));
        this
    }

    pub fn new() -> Self {
        Self::with_fallback(Fallback::Exhausted)
    }

    /// Queue a reply for one agent role.
    pub fn reply(self, role: AgentRole, text: impl Into<String>) -> Self {
        self.by_role
            .lock()
            .unwrap()
            .entry(role)
            .or_default()
            .push_back(text.into());
        self
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn requests(&self) -> Vec<ChatRequest> {
        self.seen.lock().unwrap().clone()
    }
}

impl Default for ScriptedChat {
    fn default() -> Self {
        Self::new()
    }
}

impl ChatBackend for ScriptedChat {
    fn id(&self) -> &str {
        "scripted"
    }

    fn complete(
        &self,
        request: &ChatRequest,
        _config: &BackendConfig,
    ) -> Result<ChatResponse, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.seen.lock().unwrap().push(request.clone());
        let scripted = self
            .by_role
            .lock()
            .unwrap()
            .get_mut(&request.agent)
            .and_then(VecDeque::pop_front)
            .or_else(|| self.shared.lock().unwrap().pop_front());
        let text = match (scripted, &self.fallback) {
            (Some(t), _) => t,
            (None, Fallback::Echo) => request.last_text().unwrap_or_default().to_string(),
            (None, Fallback::Always(t)) => t.clone(),
            (None, Fallback::Exhausted) => {
                return Err(BackendError::Transport(format!(
                    "script exhausted for agent {}",
                    request.agent
                )))
            }
        };
        Ok(ChatResponse { text, usage: Usage::default(), backend_id: self.id().into() })
    }
}

/// Bag-of-tokens feature hashing: each lowercase alphanumeric token adds
/// `±1` at index `h % dim`, with the sign taken from bit 32 of `h`, where
/// `h = stable_hash(token)`. The result is L2-normalized (zero vectors stay
/// zero).
#[derive(Debug, Clone)]
pub struct HashEmbedder {
    pub dim: usize,
}

impl Default for HashEmbedder {
    fn default() -> Self {
        Self { dim: 64 }
    }
}

impl HashEmbedder {
    pub fn project(&self, text: &str) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        for tok in tokens(text) {
            let h = stable_hash(&[tok.as_bytes()]);
            let idx = (h % self.dim as u64) as usize;
            let sign = if (h >> 32) & 1 == 1 { -1.0 } else { 1.0 };
            v[idx] += sign;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    }
}

impl EmbedBackend for HashEmbedder {
    fn id(&self) -> &str {
        "hash-embedder"
    }

    fn embed(
        &self,
        texts: &[String],
        _config: &BackendConfig,
    ) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(texts.iter().map(|t| EmbeddingVector::new(self.project(t), t)).collect())
    }
}

/// Imager that stores a tiny PNG whose pixels derive from `(prompt, seed)`.
pub struct PlaceholderImager {
    store: Arc<ArtifactStore>,
}

impl PlaceholderImager {
    pub fn new(store: Arc<ArtifactStore>) -> Self {
        Self { store }
    }
}

impl ImageBackend for PlaceholderImager {
    fn id(&self) -> &str {
        "placeholder-imager"
    }

    fn generate(
        &self,
        prompt: &str,
        seed: u64,
        _config: &BackendConfig,
    ) -> Result<ImageRef, BackendError> {
        let h = stable_hash(&[prompt.as_bytes(), &seed.to_le_bytes()]);
        let pixels: Vec<u8> = h.to_le_bytes().iter().flat_map(|b| [*b, b ^ 0x55, 0x80]).collect();
        let png = crate::synthetic::encode_png(8, 1, &pixels)?;
        Ok(self.store.put(
            png,
            "image/png",
            Provenance::Http { prompt_id: sha256_hex(prompt.as_bytes())[..16].to_string() },
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{embed, generate_image};

    #[test]
    fn identical_texts_embed_identically() {
        let e = HashEmbedder::default();
        let v = embed(&e, &["a".into(), "a".into()], &BackendConfig::default()).unwrap();
        assert_eq!(v[0], v[1]);
    }

    // Oracle: recompute the documented projection by hand for single tokens.
    #[test]
    fn distinct_texts_follow_documented_projection() {
        let e = HashEmbedder::default();
        let v = embed(&e, &["a".into(), "b".into()], &BackendConfig::default()).unwrap();
        assert_eq!(v[0].dim, v[1].dim);
        for (text, vec) in [("a", &v[0]), ("b", &v[1])] {
            let h = stable_hash(&[text.as_bytes()]);
            let mut expected = vec![0.0; 64];
            expected[(h % 64) as usize] = if (h >> 32) & 1 == 1 { -1.0 } else { 1.0 };
            assert_eq!(vec.values, expected);
        }
        assert_ne!(v[0].values, v[1].values);
    }

    #[test]
    fn empty_embed_input_is_precondition_error() {
        let e = HashEmbedder::default();
        assert!(matches!(
            embed(&e, &[], &BackendConfig::default()),
            Err(BackendError::Precondition(_))
        ));
    }

    #[test]
    fn placeholder_imager_is_pure() {
        let store = Arc::new(ArtifactStore::in_memory());
        let imager = PlaceholderImager::new(store.clone());
        let cfg = BackendConfig::default();
        let a = generate_image(&imager, "a red apple", 1, &cfg).unwrap();
        let b = generate_image(&imager, "a red apple", 1, &cfg).unwrap();
        let c = generate_image(&imager, "a red apple", 2, &cfg).unwrap();
        assert_eq!(a.content_hash, b.content_hash);
        assert!(store.resolve(&c).is_ok());
        assert!(matches!(
            generate_image(&imager, "  ", 1, &cfg),
            Err(BackendError::Precondition(_))
        ));
    }

    #[test]
    fn role_queue_takes_precedence() {
        let chat = ScriptedChat::sequence(["shared"]).reply(AgentRole::Vqa, "YES");
        let cfg = BackendConfig::default();
        let vqa = ChatRequest::new(AgentRole::Vqa, "s").text("q");
        let cap = ChatRequest::new(AgentRole::Caption, "s").text("q");
        assert_eq!(chat.complete(&vqa, &cfg).unwrap().text, "YES");
        assert_eq!(chat.complete(&cap, &cfg).unwrap().text, "shared");
        assert!(chat.complete(&cap, &cfg).is_err());
    }
}
