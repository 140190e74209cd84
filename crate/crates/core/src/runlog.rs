//! Call accounting and append-only JSONL event logs.

use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::backends::{ChatRequest, ChatResponse, ImageRef, UserPart};

/// Totals over one run's backend traffic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallTotals {
    pub chat_calls: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub images: u64,
    pub embedded_texts: u64,
}

/// Counts every backend call; optionally mirrors each exchange to a JSONL
/// file. Requests carry no credentials, so the mirror is secret-free.
#[derive(Debug, Default)]
pub struct CallLog {
    chat_calls: AtomicU64,
    prompt_tokens: AtomicU64,
    completion_tokens: AtomicU64,
    images: AtomicU64,
    embedded_texts: AtomicU64,
    mirror: Option<Mutex<BufWriter<File>>>,
}

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Also append each exchange to `path`.
    pub fn mirrored(path: &Path) -> io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { mirror: Some(Mutex::new(BufWriter::new(file))), ..Self::default() })
    }

    fn mirror(&self, value: serde_json::Value) {
        if let Some(m) = &self.mirror {
            let mut w = m.lock().expect("call mirror poisoned");
            let res = serde_json::to_writer(&mut *w, &value)
                .map_err(io::Error::other)
                .and_then(|_| w.write_all(b"\n"))
                .and_then(|_| w.flush());
            if let Err(e) = res {
                tracing::warn!(error = %e, "could not mirror call to the call log");
            }
        }
    }

    pub fn record_chat(&self, request: &ChatRequest, response: &ChatResponse) {
        self.chat_calls.fetch_add(1, Ordering::SeqCst);
        self.prompt_tokens.fetch_add(response.usage.prompt_tokens, Ordering::SeqCst);
        self.completion_tokens.fetch_add(response.usage.completion_tokens, Ordering::SeqCst);
        if self.mirror.is_some() {
            let parts: Vec<serde_json::Value> = request
                .user_parts
                .iter()
                .map(|p| match p {
                    UserPart::Text { text } => json!({"text": text}),
                    UserPart::Image { image } => json!({"image": image.content_hash}),
                })
                .collect();
            self.mirror(json!({
                "kind": "chat",
                "agent": request.agent.as_str(),
                "system": request.system_text,
                "user": parts,
                "reply": response.text,
                "usage": response.usage,
                "backend": response.backend_id,
            }));
        }
    }

    pub fn record_image(&self, prompt: &str, seed: u64, image: &ImageRef) {
        self.images.fetch_add(1, Ordering::SeqCst);
        self.mirror(json!({"kind": "image", "prompt": prompt, "seed": seed, "image": image.content_hash}));
    }

    pub fn record_embed(&self, texts: usize) {
        self.embedded_texts.fetch_add(texts as u64, Ordering::SeqCst);
    }

    pub fn chat_calls(&self) -> u64 {
        self.chat_calls.load(Ordering::SeqCst)
    }

    pub fn totals(&self) -> CallTotals {
        CallTotals {
            chat_calls: self.chat_calls(),
            prompt_tokens: self.prompt_tokens.load(Ordering::SeqCst),
            completion_tokens: self.completion_tokens.load(Ordering::SeqCst),
            images: self.images.load(Ordering::SeqCst),
            embedded_texts: self.embedded_texts.load(Ordering::SeqCst),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("run log {path} is corrupt at line {line}: {message}")]
    CorruptLog { path: PathBuf, line: usize, message: String },
}

/// Writes one JSON event per line, flushed before `write` returns.
pub struct EventWriter {
    out: BufWriter<File>,
}

impl EventWriter {
    /// Start a new log, replacing any existing file.
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    /// Continue a log after its first `valid_len` bytes, discarding the rest.
    pub fn resume(path: &Path, valid_len: u64) -> io::Result<Self> {
        let file = OpenOptions::new().write(true).open(path)?;
        file.set_len(valid_len)?;
        let mut out = BufWriter::new(file);
        io::Seek::seek(out.get_mut(), io::SeekFrom::End(0))?;
        Ok(Self { out })
    }

    pub fn write<T: Serialize>(&mut self, event: &T) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, event).map_err(io::Error::other)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        self.out.get_ref().sync_data()
    }
}

/// The readable prefix of an event log.
#[derive(Debug, Clone, PartialEq)]
pub struct LogContents<T> {
    pub events: Vec<T>,
    /// Byte length of the well-formed prefix.
    pub valid_len: u64,
    /// Byte offset just past each event's line, aligned with `events`.
    pub ends: Vec<u64>,
    /// Whether an unreadable final line was dropped.
    pub dropped_tail: bool,
}

/// Read an event log. An unreadable last line is treated as a write cut
/// short and dropped with a warning; an unreadable earlier line is fatal.
pub fn read_events<T: DeserializeOwned>(path: &Path) -> Result<LogContents<T>, LogError> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut lines = Vec::new();
    let mut buf = String::new();
    loop {
        buf.clear();
        if reader.read_line(&mut buf)? == 0 {
            break;
        }
        lines.push(buf.clone());
    }
    let mut out = LogContents { events: Vec::new(), valid_len: 0, ends: Vec::new(), dropped_tail: false };
    let last = lines.len().saturating_sub(1);
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            out.valid_len += line.len() as u64;
            continue;
        }
        let parsed = if line.ends_with('\n') {
            serde_json::from_str::<T>(line).map_err(|e| e.to_string())
        } else {
            Err("line is not newline-terminated".to_string())
        };
        match parsed {
            Ok(event) => {
                out.events.push(event);
                out.valid_len += line.len() as u64;
                out.ends.push(out.valid_len);
            }
            Err(message) if i == last => {
                tracing::warn!(path = %path.display(), line = i + 1, %message, "dropping truncated final log line");
                out.dropped_tail = true;
            }
            Err(message) => {
                return Err(LogError::CorruptLog { path: path.to_path_buf(), line: i + 1, message })
            }
        }
    }
    Ok(out)
}

const CROCKFORD: &[u8; 32] = b"0123456789ABCDEFGHJKMNPQRSTVWXYZ";

/// A 26-character ULID-style id: 48-bit millisecond timestamp followed by
/// 80 bits derived from `entropy`. Ids sort by creation time.
pub fn sortable_id(millis: u64, entropy: &[u8]) -> String {
    let digest = crate::text::sha256_hex(entropy);
    let tail = u128::from_str_radix(&digest[..20], 16).expect("hex digest");
    let value: u128 = ((millis as u128 & 0xFFFF_FFFF_FFFF) << 80) | tail;
    (0..26)
        .rev()
        .map(|i| CROCKFORD[((value >> (i * 5)) & 31) as usize] as char)
        .collect()
}

pub fn new_run_id(entropy: &[u8]) -> String {
    let millis = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
    sortable_id(millis, entropy)
}

/// Write `value` as pretty JSON, atomically via a temporary sibling file.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let tmp = path.with_extension("json.tmp");
    let text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    fs::write(&tmp, text + "\n")?;
    fs::rename(tmp, path)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> io::Result<T> {
    serde_json::from_str(&fs::read_to_string(path)?).map_err(io::Error::other)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Debug, PartialEq, Serialize, Deserialize)]
    struct Ev {
        n: u32,
    }

    #[test]
    fn round_trip_and_truncated_tail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut w = EventWriter::create(&path).unwrap();
        w.write(&Ev { n: 1 }).unwrap();
        w.write(&Ev { n: 2 }).unwrap();
        drop(w);
        let full = fs::metadata(&path).unwrap().len();
        let mut f = OpenOptions::new().append(true).open(&path).unwrap();
        f.write_all(b"{\"n\":").unwrap();
        let log: LogContents<Ev> = read_events(&path).unwrap();
        assert_eq!(log.events, vec![Ev { n: 1 }, Ev { n: 2 }]);
        assert!(log.dropped_tail);
        assert_eq!(log.valid_len, full);
        let mut w = EventWriter::resume(&path, log.valid_len).unwrap();
        w.write(&Ev { n: 3 }).unwrap();
        let log: LogContents<Ev> = read_events(&path).unwrap();
        assert_eq!(log.events.len(), 3);
        assert!(!log.dropped_tail);
    }

    #[test]
    fn mangled_middle_line_is_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        fs::write(&path, "{\"n\":1}\n{\"n\":\n{\"n\":3}\n").unwrap();
        let err = read_events::<Ev>(&path).unwrap_err();
        assert!(matches!(err, LogError::CorruptLog { line: 2, .. }));
    }

    #[test]
    fn ids_sort_by_time() {
        let a = sortable_id(1_000, b"x");
        let b = sortable_id(2_000, b"a");
        assert_eq!(a.len(), 26);
        assert!(a < b);
        assert_eq!(sortable_id(5, b"e"), sortable_id(5, b"e"));
    }

    #[test]
    fn call_counts_accumulate() {
        let log = CallLog::new();
        let req = ChatRequest::new(crate::backends::AgentRole::Caption, "s").text("t");
        let resp = ChatResponse {
            text: "r".into(),
            usage: crate::backends::Usage { prompt_tokens: 3, completion_tokens: 4 },
            backend_id: "m".into(),
        };
        log.record_chat(&req, &resp);
        log.record_chat(&req, &resp);
        log.record_embed(5);
        let t = log.totals();
        assert_eq!((t.chat_calls, t.prompt_tokens, t.completion_tokens, t.embedded_texts), (2, 6, 8, 5));
    }
}
