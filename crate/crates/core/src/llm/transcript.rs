//! Hash-keyed transcripts for deterministic record/replay.
//!
//! A transcript is a JSONL file; each line holds the request hash, a readable
//! copy of the request (images replaced by their content hash) and the
//! response. Replay serves entries for a hash in recorded order and keeps
//! returning the last one once the queue for that hash is drained, so a
//! repeated identical request (for example a retried coder task) stays
//! answerable.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ChatBackend, ChatRequest, ChatResponse, LlmError, Part};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub hash: String,
    pub request: Value,
    pub response: ChatResponse,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Canonical JSON form of a request. Object keys are sorted by `serde_json`,
/// and image parts carry the SHA-256 of their bytes instead of their path.
pub fn canonical_request(request: &ChatRequest) -> Result<Value, LlmError> {
    let parts = request
        .parts
        .iter()
        .map(|p| match p {
            Part::Text { text } => Ok(json!({ "text": text })),
            Part::Image { path } => {
                let bytes = std::fs::read(path).map_err(|source| LlmError::Image {
                    path: path.clone(),
                    source,
                })?;
                Ok(json!({ "image_sha256": sha256_hex(&bytes) }))
            }
        })
        .collect::<Result<Vec<_>, LlmError>>()?;
    Ok(json!({
        "model": request.model,
        "role": request.role,
        "system": request.system,
        "temperature": request.temperature,
        "schema_id": request.schema_id,
        "parts": parts,
    }))
}

pub fn request_hash(request: &ChatRequest) -> Result<String, LlmError> {
    let canonical = canonical_request(request)?;
    Ok(sha256_hex(canonical.to_string().as_bytes()))
}

fn digest(request: &ChatRequest) -> String {
    let text = request.text();
    let head: String = text.chars().take(80).collect();
    format!("{} {} {:?}", request.model, request.role.as_str(), head)
}

/// Wraps another backend and appends every exchange to a transcript file.
pub struct RecordingBackend {
    inner: Box<dyn ChatBackend>,
    out: Mutex<File>,
    path: PathBuf,
}

impl RecordingBackend {
    /// Appends to `path`, creating it if needed.
    pub fn create(inner: Box<dyn ChatBackend>, path: &Path) -> Result<Self, LlmError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        Ok(RecordingBackend {
            inner,
            out: Mutex::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl ChatBackend for RecordingBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let canonical = canonical_request(request)?;
        let hash = sha256_hex(canonical.to_string().as_bytes());
        let response = self.inner.complete(request)?;
        let entry = TranscriptEntry {
            hash,
            request: canonical,
            response: response.clone(),
        };
        let line = serde_json::to_string(&entry).expect("entry serializes");
        let mut out = self.out.lock().expect("transcript lock");
        writeln!(out, "{line}")
            .and_then(|_| out.flush())
            .map_err(|e| LlmError::Transcript(format!("{}: {e}", self.path.display())))?;
        Ok(response)
    }
}

struct Queue {
    pending: VecDeque<ChatResponse>,
    last: ChatResponse,
}

/// Serves responses from a transcript; never contacts a provider.
pub struct ReplayBackend {
    entries: Mutex<HashMap<String, Queue>>,
}

impl ReplayBackend {
    pub fn open(path: &Path) -> Result<Self, LlmError> {
        let file = File::open(path).map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| LlmError::Transcript(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: TranscriptEntry = serde_json::from_str(&line)
                .map_err(|e| LlmError::Transcript(format!("{}:{}: {e}", path.display(), i + 1)))?;
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_entries(entries: impl IntoIterator<Item = TranscriptEntry>) -> Self {
        let mut map: HashMap<String, Queue> = HashMap::new();
        for e in entries {
            match map.get_mut(&e.hash) {
                Some(q) => {
                    q.pending.push_back(e.response.clone());
                    q.last = e.response;
                }
                None => {
                    map.insert(
                        e.hash,
                        Queue {
                            pending: VecDeque::from([e.response.clone()]),
                            last: e.response,
                        },
                    );
                }
            }
        }
        ReplayBackend {
            entries: Mutex::new(map),
        }
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let hash = request_hash(request)?;
        let mut map = self.entries.lock().expect("replay lock");
        let q = map.get_mut(&hash).ok_or_else(|| LlmError::ReplayMiss {
            hash: hash.clone(),
            digest: digest(request),
        })?;
        Ok(q.pending.pop_front().unwrap_or_else(|| q.last.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{AgentRole, ScriptedBackend};
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    fn request(text: &str) -> ChatRequest {
        ChatRequest {
            model: "m".into(),
            role: AgentRole::Doctor,
            system: "s".into(),
            parts: vec![Part::text(text)],
            temperature: 0.2,
            schema_id: None,
        }
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = request_hash(&request("x")).unwrap();
        assert_eq!(a, request_hash(&request("x")).unwrap());
        assert_ne!(a, request_hash(&request("y")).unwrap());
        let mut r = request("x");
        r.temperature = 1.0;
        assert_ne!(a, request_hash(&r).unwrap());
    }

    #[test]
    fn images_hash_by_content_not_path() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.png");
        let p2 = dir.path().join("b.png");
        std::fs::write(&p1, b"same").unwrap();
        std::fs::write(&p2, b"same").unwrap();
        let mut r1 = request("x");
        r1.parts.push(Part::image(&p1));
        let mut r2 = request("x");
        r2.parts.push(Part::image(&p2));
        assert_eq!(request_hash(&r1).unwrap(), request_hash(&r2).unwrap());
        std::fs::write(&p2, b"different").unwrap();
        assert_ne!(request_hash(&r1).unwrap(), request_hash(&r2).unwrap());
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let n = Arc::new(AtomicUsize::new(0));
        let c = n.clone();
        let inner = ScriptedBackend::new(move |req| Ok(format!("{}#{}", req.text(), c.fetch_add(1, Ordering::SeqCst))));
        let rec = RecordingBackend::create(Box::new(inner), &path).unwrap();
        let first = rec.complete(&request("a")).unwrap();
        let second = rec.complete(&request("a")).unwrap();
        rec.complete(&request("b")).unwrap();
        drop(rec);

        let replay = ReplayBackend::open(&path).unwrap();
        assert_eq!(replay.complete(&request("a")).unwrap(), first);
        assert_eq!(replay.complete(&request("a")).unwrap(), second);
        // drained: last entry repeats
        assert_eq!(replay.complete(&request("a")).unwrap(), second);
        assert_eq!(replay.complete(&request("b")).unwrap().text, "b#2");
        match replay.complete(&request("c")) {
            Err(LlmError::ReplayMiss { digest, .. }) => assert!(digest.contains("doctor")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_transcript_line_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        match ReplayBackend::open(&path) {
            Err(LlmError::Transcript(msg)) => assert!(msg.contains(":1:")),
            other => panic!("unexpected {:?}", other.err()),
        }
    }
}
