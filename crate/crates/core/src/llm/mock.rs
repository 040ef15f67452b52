use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use serde::Deserialize;

use super::{cache_key, synthetic_reply, Backend, BackendError, ChatRequest};

type Responder = Box<dyn Fn(&ChatRequest) -> Option<String> + Send + Sync>;

/// Scriptable in-process backend.
///
/// Replies are resolved in order: canned digest map, substring patterns on the
/// last user message, a custom responder, then (if enabled) the synthetic
/// template-aware responder. Unresolved requests fail with
/// [`BackendError::NotScripted`].
#[derive(Default)]
pub struct MockBackend {
    canned: HashMap<String, String>,
    /// Every needle must occur in the prompt.
    patterns: Vec<(Vec<String>, String)>,
    responder: Option<Responder>,
    synthetic: bool,
    fail_remaining: AtomicU32,
    calls: AtomicUsize,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Needles {
    One(String),
    All(Vec<String>),
}

#[derive(Deserialize)]
struct Pattern {
    contains: Needles,
    reply: String,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mock that answers every known prompt template deterministically.
    pub fn synthetic() -> Self {
        MockBackend { synthetic: true, ..Self::default() }
    }

    /// Loads `<digest>.response` files and an optional `patterns.json`
    /// (`[{"contains": "..." | ["...", ...], "reply": "..."}]`, first match
    /// wins) from `dir`. The synthetic
    /// responder answers anything not scripted there.
    pub fn from_dir(dir: &Path) -> std::io::Result<Self> {
        let mut mock = MockBackend::synthetic();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(digest) = name.strip_suffix(".response") {
                mock.canned.insert(digest.to_string(), std::fs::read_to_string(&path)?);
            }
        }
        let patterns = dir.join("patterns.json");
        if patterns.exists() {
            let list: Vec<Pattern> = serde_json::from_str(&std::fs::read_to_string(&patterns)?)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            mock.patterns = list
                .into_iter()
                .map(|p| match p.contains {
                    Needles::One(n) => (vec![n], p.reply),
                    Needles::All(ns) => (ns, p.reply),
                })
                .collect();
        }
        Ok(mock)
    }

    pub fn with_canned(mut self, digest: impl Into<String>, text: impl Into<String>) -> Self {
        self.canned.insert(digest.into(), text.into());
        self
    }

    pub fn with_reply(self, req: &ChatRequest, text: impl Into<String>) -> Self {
        let digest = cache_key(req);
        self.with_canned(digest, text)
    }

    /// Replies with `text` to any request whose last user message contains `needle`.
    pub fn with_pattern(mut self, needle: impl Into<String>, text: impl Into<String>) -> Self {
        self.patterns.push((vec![needle.into()], text.into()));
        self
    }

    pub fn with_responder(mut self, f: impl Fn(&ChatRequest) -> Option<String> + Send + Sync + 'static) -> Self {
        self.responder = Some(Box::new(f));
        self
    }

    /// The next `n` calls fail with a retryable transport error.
    pub fn failing_first(self, n: u32) -> Self {
        self.fail_remaining.store(n, Ordering::SeqCst);
        self
    }

    /// Number of wire attempts seen so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Backend for MockBackend {
    fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let failing = self
            .fail_remaining
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
            .is_ok();
        if failing {
            return Err(BackendError::Transient("scripted failure".into()));
        }
        let digest = cache_key(req);
        if let Some(t) = self.canned.get(&digest) {
            return Ok(t.clone());
        }
        let prompt = req.last_user_content();
        if let Some((_, reply)) = self.patterns.iter().find(|(needles, _)| needles.iter().all(|n| prompt.contains(n.as_str()))) {
            return Ok(reply.clone());
        }
        if let Some(reply) = self.responder.as_ref().and_then(|f| f(req)) {
            return Ok(reply);
        }
        if self.synthetic {
            if let Some(reply) = synthetic_reply(prompt) {
                return Ok(reply);
            }
        }
        Err(BackendError::NotScripted(digest))
    }
}
