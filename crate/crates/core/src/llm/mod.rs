//! Chat-completion gateway.
//!
//! Every LLM call in the crate goes through [`Gateway::complete`], which adds a
//! content-addressed response cache (memory plus an optional directory of
//! `<digest>.response` files), bounded retries with exponential backoff, a cap
//! on in-flight calls and per-digest coalescing of concurrent misses.

mod http;
mod mock;
mod synthetic;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use http::{HttpBackend, DEFAULT_BASE_URL};
pub use mock::MockBackend;
pub use synthetic::synthetic_reply;

pub const DEFAULT_MODEL: &str = "gpt-3.5-turbo";
/// Sampling temperature for generation prompts.
pub const GENERATION_TEMPERATURE: f64 = 0.7;
/// Sampling temperature for rule extraction and labeling prompts.
pub const DETERMINISTIC_TEMPERATURE: f64 = 0.0;
pub const DEFAULT_MAX_TOKENS: u32 = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    /// A request holding one user message.
    pub fn user(model: impl Into<String>, content: impl Into<String>, temperature: f64) -> Self {
        ChatRequest {
            model: model.into(),
            messages: vec![Message { role: Role::User, content: content.into() }],
            temperature,
            max_tokens: DEFAULT_MAX_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), GatewayError> {
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("request has no messages".into()));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(GatewayError::InvalidRequest(format!("temperature {} must be >= 0", self.temperature)));
        }
        if self.max_tokens == 0 {
            return Err(GatewayError::InvalidRequest("max_tokens must be positive".into()));
        }
        Ok(())
    }

    /// Content of the last user message, which is what the mock backends key on.
    pub fn last_user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// Canonical byte serialization used for cache keys: fixed field order,
/// JSON-escaped strings, temperature at six decimals.
pub fn canonical_bytes(req: &ChatRequest) -> Vec<u8> {
    let mut s = String::from("edda-chat-v1\n");
    s.push_str(&format!("model:{}\n", json_str(&req.model)));
    s.push_str(&format!("temperature:{:.6}\n", req.temperature));
    s.push_str(&format!("max_tokens:{}\n", req.max_tokens));
    for m in &req.messages {
        s.push_str(&format!("message:{}:{}\n", m.role.as_str(), json_str(&m.content)));
    }
    s.into_bytes()
}

/// Lowercase hex SHA-256 of [`canonical_bytes`].
pub fn cache_key(req: &ChatRequest) -> String {
    hex::encode(Sha256::digest(canonical_bytes(req)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CompletionText {
    pub text: String,
    pub cached: bool,
    pub model: String,
}

/// Failure reported by a backend for a single attempt.
#[derive(Debug, Clone, thiserror::Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transient(String),
    #[error("status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("response has no assistant content: {0}")]
    MissingContent(String),
    #[error("mock backend has no reply for digest {0}")]
    NotScripted(String),
}

impl BackendError {
    fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transient(_) => true,
            BackendError::Status { status, .. } => *status == 429 || *status >= 500,
            BackendError::MissingContent(_) | BackendError::NotScripted(_) => false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("gave up after {attempts} attempts: {last}")]
    ExhaustedRetries { attempts: u32, last: BackendError },
    #[error("request failed with status {status}: {excerpt}")]
    Status { status: u16, excerpt: String },
    #[error("response missing choices[0].message.content: {0}")]
    MissingContent(String),
    #[error("{0}")]
    Backend(BackendError),
    #[error("cache directory {path} is not writable: {source}")]
    CacheWrite {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<BackendError> for GatewayError {
    fn from(e: BackendError) -> Self {
        match e {
            BackendError::Status { status, body } => GatewayError::Status { status, excerpt: excerpt(&body) },
            BackendError::MissingContent(b) => GatewayError::MissingContent(excerpt(&b)),
            other => GatewayError::Backend(other),
        }
    }
}

fn excerpt(body: &str) -> String {
    const MAX: usize = 200;
    match body.char_indices().nth(MAX) {
        Some((i, _)) => format!("{}...", &body[..i]),
        None => body.to_string(),
    }
}

/// One wire attempt. Implementations must be thread-safe; the gateway handles
/// retries and caching.
pub trait Backend: Send + Sync {
    fn send(&self, req: &ChatRequest) -> Result<String, BackendError>;
}

#[derive(Debug, Clone)]
pub struct GatewayConfig {
    /// Model id stamped on requests built by the pipeline.
    pub model: String,
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub concurrency: usize,
    pub cache_dir: Option<PathBuf>,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            model: DEFAULT_MODEL.to_string(),
            max_retries: 3,
            base_backoff: Duration::from_secs(1),
            concurrency: 4,
            cache_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct GatewayStats {
    pub hits: u64,
    pub misses: u64,
    pub attempts: u64,
}

struct Semaphore {
    permits: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore { permits: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut p = self.permits.lock().unwrap();
        while *p == 0 {
            p = self.cv.wait(p).unwrap();
        }
        *p -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.permits.lock().unwrap() += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    cfg: GatewayConfig,
    memory: Mutex<HashMap<String, String>>,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    permits: Semaphore,
    hits: AtomicU64,
    misses: AtomicU64,
    attempts: AtomicU64,
    tmp_counter: AtomicU64,
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, cfg: GatewayConfig) -> Self {
        let permits = Semaphore::new(cfg.concurrency);
        Gateway {
            backend,
            cfg,
            memory: Mutex::new(HashMap::new()),
            inflight: Mutex::new(HashMap::new()),
            permits,
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            attempts: AtomicU64::new(0),
            tmp_counter: AtomicU64::new(0),
        }
    }

    pub fn model(&self) -> &str {
        &self.cfg.model
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.cfg
    }

    pub fn stats(&self) -> GatewayStats {
        GatewayStats {
            hits: self.hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
            attempts: self.attempts.load(Ordering::Relaxed),
        }
    }

    /// Builds a single-user-message request for the configured model.
    pub fn request(&self, prompt: impl Into<String>, temperature: f64) -> ChatRequest {
        ChatRequest::user(self.cfg.model.clone(), prompt, temperature)
    }

    fn cache_path(&self, digest: &str) -> Option<PathBuf> {
        self.cfg.cache_dir.as_ref().map(|d| d.join(format!("{digest}.response")))
    }

    fn lookup(&self, digest: &str) -> Option<String> {
        if let Some(t) = self.memory.lock().unwrap().get(digest) {
            return Some(t.clone());
        }
        let path = self.cache_path(digest)?;
        let text = std::fs::read_to_string(path).ok()?;
        self.memory.lock().unwrap().insert(digest.to_string(), text.clone());
        Some(text)
    }

    fn store(&self, digest: &str, text: &str) -> Result<(), GatewayError> {
        if let Some(dir) = &self.cfg.cache_dir {
            let cache_err = |source| GatewayError::CacheWrite { path: dir.display().to_string(), source };
            std::fs::create_dir_all(dir).map_err(cache_err)?;
            let n = self.tmp_counter.fetch_add(1, Ordering::Relaxed);
            let tmp = dir.join(format!(".{digest}.{}.{n}.tmp", std::process::id()));
            std::fs::write(&tmp, text).map_err(cache_err)?;
            let target = dir.join(format!("{digest}.response"));
            if let Err(e) = std::fs::rename(&tmp, &target) {
                let _ = std::fs::remove_file(&tmp);
                return Err(cache_err(e));
            }
        }
        self.memory.lock().unwrap().insert(digest.to_string(), text.to_string());
        Ok(())
    }

    fn digest_lock(&self, digest: &str) -> Arc<Mutex<()>> {
        self.inflight
            .lock()
            .unwrap()
            .entry(digest.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }

    pub fn complete(&self, req: &ChatRequest) -> Result<CompletionText, GatewayError> {
        req.validate()?;
        let digest = cache_key(req);
        let hit = |text: String| {
            self.hits.fetch_add(1, Ordering::Relaxed);
            CompletionText { text, cached: true, model: req.model.clone() }
        };
        if let Some(text) = self.lookup(&digest) {
            return Ok(hit(text));
        }

        // Concurrent misses on one digest queue here; followers find the
        // leader's cached response.
        let lock = self.digest_lock(&digest);
        let _guard = lock.lock().unwrap();
        if let Some(text) = self.lookup(&digest) {
            return Ok(hit(text));
        }

        self.misses.fetch_add(1, Ordering::Relaxed);
        let text = {
            let _permit = self.permits.acquire();
            self.send_with_retries(req, &digest)?
        };
        self.store(&digest, &text)?;
        Ok(CompletionText { text, cached: false, model: req.model.clone() })
    }

    fn send_with_retries(&self, req: &ChatRequest, digest: &str) -> Result<String, GatewayError> {
        let mut attempt = 0u32;
        loop {
            self.attempts.fetch_add(1, Ordering::Relaxed);
            match self.backend.send(req) {
                Ok(text) => return Ok(text),
                Err(e) if e.is_retryable() && attempt < self.cfg.max_retries => {
                    let wait = self.cfg.base_backoff.saturating_mul(1u32 << attempt.min(16));
                    log::warn!("attempt {} for {} failed: {e}; retrying in {:?}", attempt + 1, &digest[..12], wait);
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(GatewayError::ExhaustedRetries { attempts: attempt + 1, last: e });
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// Gateway over a live chat-completion endpoint configured from
/// `EDDA_BASE_URL` and `EDDA_API_KEY`.
pub fn gateway_from_env(cfg: GatewayConfig) -> Result<Gateway, GatewayError> {
    let backend = HttpBackend::from_env()?;
    Ok(Gateway::new(Arc::new(backend), cfg))
}

/// Gateway over a directory-backed mock (see [`MockBackend::from_dir`]).
pub fn mock_gateway(dir: &Path, cfg: GatewayConfig) -> std::io::Result<Gateway> {
    let backend = MockBackend::from_dir(dir)?;
    Ok(Gateway::new(Arc::new(backend), cfg))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicUsize;

    fn req(t: f64) -> ChatRequest {
        ChatRequest::user("gpt-3.5-turbo", "hello", t)
    }

    fn fast(cache_dir: Option<PathBuf>) -> GatewayConfig {
        GatewayConfig { base_backoff: Duration::ZERO, cache_dir, ..GatewayConfig::default() }
    }

    #[test]
    fn cache_key_is_deterministic_and_sensitive() {
        assert_eq!(cache_key(&req(0.0)), cache_key(&req(0.0)));
        assert_ne!(cache_key(&req(0.0)), cache_key(&req(0.7)));
        let mut other = req(0.0);
        other.model = "llama-2-70b".into();
        assert_ne!(cache_key(&req(0.0)), cache_key(&other));
        assert_eq!(cache_key(&req(0.0)).len(), 64);
    }

    #[test]
    fn canonical_bytes_and_digest_are_pinned() {
        let r = ChatRequest::user("m", "hi \"there\"", 0.7);
        let canon = "edda-chat-v1\nmodel:\"m\"\ntemperature:0.700000\nmax_tokens:512\nmessage:user:\"hi \\\"there\\\"\"\n";
        assert_eq!(String::from_utf8(canonical_bytes(&r)).unwrap(), canon);
        // Digest of the string above computed with Python's hashlib.sha256.
        assert_eq!(cache_key(&r), "b520bee84f378563e711a81b2fdba2534230b9911868e1b25b6a06c962535374");
        // Known-answer vector for the hash itself.
        assert_eq!(
            hex::encode(Sha256::digest(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn second_call_hits_cache_without_network() {
        let dir = tempfile::tempdir().unwrap();
        let mock = Arc::new(MockBackend::new().with_reply(&req(0.0), "  raw reply \n"));
        let gw = Gateway::new(mock.clone(), fast(Some(dir.path().to_path_buf())));
        let a = gw.complete(&req(0.0)).unwrap();
        let b = gw.complete(&req(0.0)).unwrap();
        assert_eq!(a.text, "  raw reply \n");
        assert!(!a.cached);
        assert!(b.cached);
        assert_eq!(a.text, b.text);
        assert_eq!(mock.calls(), 1);
        let file = dir.path().join(format!("{}.response", cache_key(&req(0.0))));
        assert_eq!(std::fs::read_to_string(file).unwrap(), "  raw reply \n");

        // A fresh gateway over the same directory is served from disk.
        let mock2 = Arc::new(MockBackend::new());
        let gw2 = Gateway::new(mock2.clone(), fast(Some(dir.path().to_path_buf())));
        assert!(gw2.complete(&req(0.0)).unwrap().cached);
        assert_eq!(mock2.calls(), 0);
        // No temp files left behind.
        let names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        assert_eq!(names.len(), 1);
    }

    #[test]
    fn retries_then_succeeds() {
        let mock = Arc::new(MockBackend::new().with_reply(&req(0.0), "ok").failing_first(2));
        let gw = Gateway::new(mock.clone(), GatewayConfig { max_retries: 3, ..fast(None) });
        assert_eq!(gw.complete(&req(0.0)).unwrap().text, "ok");
        assert_eq!(mock.calls(), 3);
        assert_eq!(gw.stats().attempts, 3);
    }

    #[test]
    fn exhausted_retries_bounded_by_one_plus_r() {
        let mock = Arc::new(MockBackend::new().with_reply(&req(0.0), "ok").failing_first(10));
        let gw = Gateway::new(mock.clone(), GatewayConfig { max_retries: 3, ..fast(None) });
        let err = gw.complete(&req(0.0)).unwrap_err();
        assert!(matches!(err, GatewayError::ExhaustedRetries { attempts: 4, .. }), "{err}");
        assert_eq!(mock.calls(), 4);
    }

    #[test]
    fn unscripted_request_is_not_retried() {
        let mock = Arc::new(MockBackend::new());
        let gw = Gateway::new(mock.clone(), fast(None));
        assert!(gw.complete(&req(0.0)).is_err());
        assert_eq!(mock.calls(), 1);
    }

    #[test]
    fn unwritable_cache_dir_errors() {
        let file = tempfile::NamedTempFile::new().unwrap();
        // A regular file cannot act as a directory.
        let gw = Gateway::new(Arc::new(MockBackend::new().with_reply(&req(0.0), "x")), fast(Some(file.path().join("sub"))));
        assert!(matches!(gw.complete(&req(0.0)), Err(GatewayError::CacheWrite { .. })));
    }

    #[test]
    fn invalid_requests_rejected() {
        let gw = Gateway::new(Arc::new(MockBackend::new()), fast(None));
        let mut r = req(0.0);
        r.messages.clear();
        assert!(matches!(gw.complete(&r), Err(GatewayError::InvalidRequest(_))));
        assert!(matches!(gw.complete(&req(-1.0)), Err(GatewayError::InvalidRequest(_))));
    }

    struct Slow {
        calls: AtomicUsize,
        active: AtomicUsize,
        peak: AtomicUsize,
    }

    impl Backend for Slow {
        fn send(&self, req: &ChatRequest) -> Result<String, BackendError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.active.fetch_sub(1, Ordering::SeqCst);
            Ok(req.last_user_content().to_uppercase())
        }
    }

    #[test]
    fn concurrent_misses_coalesce_and_concurrency_is_bounded() {
        let backend = Arc::new(Slow { calls: AtomicUsize::new(0), active: AtomicUsize::new(0), peak: AtomicUsize::new(0) });
        let gw = Gateway::new(backend.clone(), GatewayConfig { concurrency: 2, ..fast(None) });
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| assert_eq!(gw.complete(&req(0.0)).unwrap().text, "HELLO"));
            }
        });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 1);

        std::thread::scope(|s| {
            for i in 0..8 {
                let gw = &gw;
                s.spawn(move || gw.complete(&ChatRequest::user("m", format!("p{i}"), 0.0)).unwrap());
            }
        });
        assert_eq!(backend.calls.load(Ordering::SeqCst), 9);
        assert!(backend.peak.load(Ordering::SeqCst) <= 2);
    }
}
