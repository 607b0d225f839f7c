//! Clients for the three model services: text embeddings, conditional
//! token log-likelihoods and reward scores.
//!
//! A [`ProviderClient`] deduplicates inputs, serves repeats from an
//! in-memory cache backed by an optional JSON-lines file, splits misses into
//! chunks of `max_batch`, retries a failed chunk as a whole, and counts
//! upstream calls, cache hits and misses.
//!
//! Endpoints:
//! - `http://…` / `https://…`: POST `{"model", "inputs": [...]}`, reply
//!   `{"outputs": [...]}` with one output per input (`null` marks a failure);
//! - `file://path` or a plain path: a precomputed JSON-lines store;
//! - `stub:uniform:V`, `stub:constant:C`, `stub:length`, `stub:hash:DIM`:
//!   built-in deterministic stubs.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use crpo_core::metrics::EmbeddingVector;
use crpo_core::text::canonicalize;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::digest::{pair_digest, sha256_hex, text_digest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderKind {
    Embedding,
    Likelihood,
    Reward,
}

impl ProviderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProviderKind::Embedding => "embedding",
            ProviderKind::Likelihood => "likelihood",
            ProviderKind::Reward => "reward",
        }
    }

    /// Environment variable that may supply the endpoint.
    pub fn env_var(self) -> &'static str {
        match self {
            ProviderKind::Embedding => "CRPO_EMBED_ENDPOINT",
            ProviderKind::Likelihood => "CRPO_LL_ENDPOINT",
            ProviderKind::Reward => "CRPO_REWARD_ENDPOINT",
        }
    }
}

impl std::fmt::Display for ProviderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;
pub const DEFAULT_MAX_BATCH: usize = 32;
pub const DEFAULT_RETRIES: u32 = 2;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProviderConfig {
    pub kind: ProviderKind,
    pub endpoint: String,
    pub model_id: String,
    pub timeout_ms: u64,
    pub max_batch: usize,
    pub retries: u32,
    /// Sent as `Authorization: Bearer …`; never written to outputs.
    #[serde(skip)]
    pub bearer_token: Option<String>,
}

impl ProviderConfig {
    pub fn new(kind: ProviderKind, endpoint: impl Into<String>) -> Self {
        ProviderConfig {
            kind,
            endpoint: endpoint.into(),
            model_id: "default".into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            max_batch: DEFAULT_MAX_BATCH,
            retries: DEFAULT_RETRIES,
            bearer_token: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("{kind} provider: no endpoint configured (use the flag, the config file or {})", .kind.env_var())]
    NoEndpoint { kind: ProviderKind },
    #[error("{kind} provider: {message}")]
    Config { kind: ProviderKind, message: String },
    #[error("{kind} provider: invalid input {index}: {message}")]
    InvalidInput { kind: ProviderKind, index: usize, message: String },
    #[error("{kind} provider: failed after {attempts} attempt(s) for input indices {indices:?}: {message}")]
    Failed { kind: ProviderKind, attempts: u32, indices: Vec<usize>, message: String },
    #[error("{kind} provider: invalid output for input {index}: {message}")]
    InvalidOutput { kind: ProviderKind, index: usize, message: String },
    #[error("{kind} provider cache: {source}")]
    Cache { kind: ProviderKind, source: std::io::Error },
}

/// One provider request item.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Input {
    Text(String),
    Pair { prompt: String, response: String },
}

impl Input {
    pub fn pair(prompt: &str, response: &str) -> Self {
        Input::Pair { prompt: prompt.into(), response: response.into() }
    }

    fn canonical(&self) -> String {
        match self {
            Input::Text(t) => canonicalize(t),
            Input::Pair { prompt, response } => {
                let mut s = canonicalize(prompt);
                s.push('\0');
                s.push_str(&canonicalize(response));
                s
            }
        }
    }

    /// Key of this input in a file store.
    pub fn store_digest(&self) -> String {
        match self {
            Input::Text(t) => text_digest(t),
            Input::Pair { prompt, response } => pair_digest(prompt, response),
        }
    }

    fn to_json(&self) -> Value {
        match self {
            Input::Text(t) => Value::String(t.clone()),
            Input::Pair { prompt, response } => json!({ "prompt": prompt, "response": response }),
        }
    }

    fn check(&self) -> Result<(), &'static str> {
        match self {
            Input::Text(t) if t.trim().is_empty() => Err("empty text"),
            Input::Pair { response, .. } if response.trim().is_empty() => Err("empty response"),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Vector(Vec<f64>),
    Logprobs(Vec<f64>),
    Scalar(f64),
}

impl Payload {
    fn to_json(&self) -> Value {
        match self {
            Payload::Vector(v) | Payload::Logprobs(v) => json!(v),
            Payload::Scalar(x) => json!(x),
        }
    }

    fn from_json(kind: ProviderKind, v: &Value) -> Result<Payload, String> {
        let list = |v: &Value| -> Result<Vec<f64>, String> {
            v.as_array()
                .ok_or_else(|| format!("expected an array of numbers, got {v}"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| format!("non-numeric entry {x}")))
                .collect()
        };
        match kind {
            ProviderKind::Embedding => list(v).map(Payload::Vector),
            ProviderKind::Likelihood => list(v).map(Payload::Logprobs),
            ProviderKind::Reward => {
                v.as_f64().map(Payload::Scalar).ok_or_else(|| format!("expected a number, got {v}"))
            }
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Payload::Vector(v) => EmbeddingVector::new(v.clone()).map(|_| ()).map_err(|e| e.to_string()),
            Payload::Logprobs(v) => {
                if v.is_empty() {
                    Err("no tokens".into())
                } else if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x <= 0.0)) {
                    Err(format!("log-probability {x} is not finite and non-positive"))
                } else {
                    Ok(())
                }
            }
            Payload::Scalar(x) if !x.is_finite() => Err(format!("non-finite score {x}")),
            Payload::Scalar(_) => Ok(()),
        }
    }
}

/// Failure of one upstream request.
#[derive(Debug, Clone, PartialEq)]
pub struct BackendError {
    pub message: String,
    /// Indices within the request that failed; empty means all.
    pub failed: Vec<usize>,
}

impl BackendError {
    pub fn all(message: impl Into<String>) -> Self {
        BackendError { message: message.into(), failed: Vec::new() }
    }
}

/// One upstream request: a payload per input, in order.
pub trait Backend: Send + Sync {
    fn call(&self, kind: ProviderKind, inputs: &[Input]) -> Result<Vec<Payload>, BackendError>;
}

// --------------------------------------------------------------- backends

pub struct HttpBackend {
    url: String,
    model: String,
    bearer: Option<String>,
    agent: ureq::Agent,
}

impl HttpBackend {
    pub fn new(cfg: &ProviderConfig) -> Self {
        HttpBackend {
            url: cfg.endpoint.clone(),
            model: cfg.model_id.clone(),
            bearer: cfg.bearer_token.clone(),
            agent: ureq::AgentBuilder::new().timeout(Duration::from_millis(cfg.timeout_ms)).build(),
        }
    }
}

#[derive(Deserialize)]
struct HttpReply {
    outputs: Vec<Value>,
}

impl Backend for HttpBackend {
    fn call(&self, kind: ProviderKind, inputs: &[Input]) -> Result<Vec<Payload>, BackendError> {
        let body = json!({
            "model": self.model,
            "inputs": inputs.iter().map(Input::to_json).collect::<Vec<_>>(),
        });
        let mut req = self.agent.post(&self.url);
        if let Some(token) = &self.bearer {
            req = req.set("Authorization", &format!("Bearer {token}"));
        }
        let reply: HttpReply = req
            .send_json(body)
            .map_err(|e| BackendError::all(e.to_string()))?
            .into_json()
            .map_err(|e| BackendError::all(format!("malformed reply: {e}")))?;
        if reply.outputs.len() != inputs.len() {
            return Err(BackendError::all(format!(
                "reply has {} outputs for {} inputs",
                reply.outputs.len(),
                inputs.len()
            )));
        }
        let mut out = Vec::with_capacity(inputs.len());
        let mut failed = Vec::new();
        let mut message = String::new();
        for (i, v) in reply.outputs.iter().enumerate() {
            match Payload::from_json(kind, v) {
                Ok(p) => out.push(p),
                Err(m) => {
                    if message.is_empty() {
                        message = if v.is_null() { "provider returned null".into() } else { m };
                    }
                    failed.push(i);
                }
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(BackendError { message, failed })
        }
    }
}

/// Precomputed JSON-lines store: `{text_digest, vector}` for embeddings,
/// `{digest, logprobs}` for likelihoods, `{digest, score}` for rewards.
pub struct FileBackend {
    store: HashMap<String, Payload>,
}

impl FileBackend {
    pub fn open(kind: ProviderKind, path: &Path) -> Result<Self, ProviderError> {
        let config_err = |message: String| ProviderError::Config { kind, message };
        let f = File::open(path).map_err(|e| config_err(format!("cannot open store {}: {e}", path.display())))?;
        let (key_field, value_field) = store_fields(kind);
        let mut store = HashMap::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line.map_err(|e| config_err(e.to_string()))?;
            if line.trim().is_empty() {
                continue;
            }
            let at = |m: String| config_err(format!("{} line {}: {m}", path.display(), i + 1));
            let v: Value = serde_json::from_str(&line).map_err(|e| at(e.to_string()))?;
            let key = v.get(key_field).and_then(Value::as_str).ok_or_else(|| at(format!("missing `{key_field}`")))?;
            let payload = Payload::from_json(kind, v.get(value_field).unwrap_or(&Value::Null)).map_err(at)?;
            store.insert(key.to_string(), payload);
        }
        Ok(FileBackend { store })
    }
}

/// (key field, payload field) of a file store line.
pub fn store_fields(kind: ProviderKind) -> (&'static str, &'static str) {
    match kind {
        ProviderKind::Embedding => ("text_digest", "vector"),
        ProviderKind::Likelihood => ("digest", "logprobs"),
        ProviderKind::Reward => ("digest", "score"),
    }
}

/// One line of a file store for `input`.
pub fn store_line(kind: ProviderKind, input: &Input, payload: &Payload) -> String {
    let (k, v) = store_fields(kind);
    let mut obj = serde_json::Map::new();
    obj.insert(k.into(), input.store_digest().into());
    obj.insert(v.into(), payload.to_json());
    Value::Object(obj).to_string()
}

impl Backend for FileBackend {
    fn call(&self, _kind: ProviderKind, inputs: &[Input]) -> Result<Vec<Payload>, BackendError> {
        let mut out = Vec::with_capacity(inputs.len());
        let mut failed = Vec::new();
        for (i, input) in inputs.iter().enumerate() {
            match self.store.get(&input.store_digest()) {
                Some(p) => out.push(p.clone()),
                None => failed.push(i),
            }
        }
        if failed.is_empty() {
            Ok(out)
        } else {
            Err(BackendError { message: "digest not found in store".into(), failed })
        }
    }
}

/// Built-in deterministic stubs.
#[derive(Debug, Clone, PartialEq)]
pub enum StubBackend {
    /// Every whitespace token has probability `1/V`.
    Uniform(u32),
    Constant(f64),
    /// Reward `chars(response) / 100`.
    Length,
    /// Pseudo-random unit-cube vectors derived from the text digest.
    Hash(usize),
}

impl StubBackend {
    pub fn parse(spec: &str) -> Result<Self, String> {
        let mut parts = spec.split(':');
        let name = parts.next().unwrap_or_default();
        let arg = parts.next();
        let num = |what: &str| -> Result<f64, String> {
            arg.ok_or_else(|| format!("stub `{name}` needs {what}"))?
                .parse::<f64>()
                .map_err(|e| format!("stub `{name}`: {e}"))
        };
        match name {
            "uniform" => {
                let v = num("a vocabulary size")?;
                if v < 1.0 || v.fract() != 0.0 {
                    return Err("vocabulary size must be a positive integer".into());
                }
                Ok(StubBackend::Uniform(v as u32))
            }
            "constant" => Ok(StubBackend::Constant(num("a value")?)),
            "length" => Ok(StubBackend::Length),
            "hash" => {
                let d = num("a dimension")?;
                if d < 1.0 || d.fract() != 0.0 {
                    return Err("dimension must be a positive integer".into());
                }
                Ok(StubBackend::Hash(d as usize))
            }
            _ => Err(format!("unknown stub `{name}`")),
        }
    }

    fn one(&self, kind: ProviderKind, input: &Input) -> Result<Payload, String> {
        let response = match input {
            Input::Text(t) => t.as_str(),
            Input::Pair { response, .. } => response.as_str(),
        };
        match (self, kind) {
            (StubBackend::Uniform(v), ProviderKind::Likelihood) => {
                let n = response.split_whitespace().count();
                Ok(Payload::Logprobs(vec![-(*v as f64).ln(); n]))
            }
            (StubBackend::Constant(c), ProviderKind::Reward) => Ok(Payload::Scalar(*c)),
            (StubBackend::Length, ProviderKind::Reward) => Ok(Payload::Scalar(response.chars().count() as f64 / 100.0)),
            (StubBackend::Hash(dim), ProviderKind::Embedding) => Ok(Payload::Vector(hash_vector(response, *dim))),
            (stub, kind) => Err(format!("stub {stub:?} cannot serve the {kind} provider")),
        }
    }
}

/// Deterministic vector in `[-1, 1]^dim` from the digest of the canonical text.
pub fn hash_vector(text: &str, dim: usize) -> Vec<f64> {
    let canon = canonicalize(text);
    let mut out = Vec::with_capacity(dim);
    let mut block = 0u32;
    while out.len() < dim {
        let mut bytes = canon.as_bytes().to_vec();
        bytes.extend_from_slice(&block.to_le_bytes());
        let d = hex::decode(sha256_hex(&bytes)).expect("hex digest");
        for chunk in d.chunks(4) {
            if out.len() == dim {
                break;
            }
            let u = u32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
            out.push(u as f64 / u32::MAX as f64 * 2.0 - 1.0);
        }
        block += 1;
    }
    out
}

impl Backend for StubBackend {
    fn call(&self, kind: ProviderKind, inputs: &[Input]) -> Result<Vec<Payload>, BackendError> {
        inputs.iter().map(|i| self.one(kind, i)).collect::<Result<_, _>>().map_err(BackendError::all)
    }
}

/// Backend from a closure, for tests and embedding in other programs.
pub struct FnBackend<F>(pub F);

impl<F> Backend for FnBackend<F>
where
    F: Fn(ProviderKind, &[Input]) -> Result<Vec<Payload>, BackendError> + Send + Sync,
{
    fn call(&self, kind: ProviderKind, inputs: &[Input]) -> Result<Vec<Payload>, BackendError> {
        (self.0)(kind, inputs)
    }
}

/// Builds the backend named by `cfg.endpoint`.
pub fn backend_for(cfg: &ProviderConfig) -> Result<Box<dyn Backend>, ProviderError> {
    let kind = cfg.kind;
    let e = cfg.endpoint.trim();
    if e.is_empty() {
        return Err(ProviderError::NoEndpoint { kind });
    }
    if e.starts_with("http://") || e.starts_with("https://") {
        return Ok(Box::new(HttpBackend::new(cfg)));
    }
    if let Some(spec) = e.strip_prefix("stub:") {
        let stub = StubBackend::parse(spec).map_err(|message| ProviderError::Config { kind, message })?;
        return Ok(Box::new(stub));
    }
    let path = match e.strip_prefix("file://") {
        Some(p) => PathBuf::from(p),
        None if e.contains("://") => {
            return Err(ProviderError::Config { kind, message: format!("unsupported endpoint scheme in `{e}`") });
        }
        None => PathBuf::from(e),
    };
    Ok(Box::new(FileBackend::open(kind, &path)?))
}

// ------------------------------------------------------------------ cache

#[derive(Serialize, Deserialize)]
struct CacheLine {
    key: String,
    payload: Value,
    created_at: u64,
}

struct Cache {
    mem: RwLock<HashMap<String, Payload>>,
    file: Option<Mutex<BufWriter<File>>>,
}

impl Cache {
    fn open(kind: ProviderKind, dir: Option<&Path>) -> std::io::Result<Cache> {
        let mut mem = HashMap::new();
        let file = match dir {
            None => None,
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(format!("{}.jsonl", kind.as_str()));
                if path.exists() {
                    for line in BufReader::new(File::open(&path)?).lines() {
                        let line = line?;
                        // a torn last line from an interrupted run is ignored
                        let Ok(entry) = serde_json::from_str::<CacheLine>(&line) else { continue };
                        if let Ok(p) = Payload::from_json(kind, &entry.payload) {
                            mem.insert(entry.key, p);
                        }
                    }
                }
                let mut f = OpenOptions::new().create(true).append(true).open(&path)?;
                // close a torn tail so the next entry starts on its own line
                let len = f.metadata()?.len();
                if len > 0 {
                    let mut last = [0u8; 1];
                    let mut r = File::open(&path)?;
                    r.seek(SeekFrom::Start(len - 1))?;
                    r.read_exact(&mut last)?;
                    if last[0] != b'\n' {
                        f.write_all(b"\n")?;
                    }
                }
                Some(Mutex::new(BufWriter::new(f)))
            }
        };
        Ok(Cache { mem: RwLock::new(mem), file })
    }

    fn get(&self, key: &str) -> Option<Payload> {
        self.mem.read().expect("cache lock").get(key).cloned()
    }

    fn put_all(&self, entries: Vec<(String, Payload)>) -> std::io::Result<()> {
        if let Some(f) = &self.file {
            let now = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
            let mut w = f.lock().expect("cache file lock");
            for (key, p) in &entries {
                let line = CacheLine { key: key.clone(), payload: p.to_json(), created_at: now };
                serde_json::to_writer(&mut *w, &line)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        self.mem.write().expect("cache lock").extend(entries);
        Ok(())
    }
}

// ----------------------------------------------------------------- client

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Counters {
    pub upstream_calls: u64,
    pub cache_hits: u64,
    pub misses: u64,
}

/// Identity of a provider as recorded in output metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ProviderId {
    pub kind: ProviderKind,
    pub model_id: String,
    pub endpoint: String,
}

pub struct ProviderClient {
    cfg: ProviderConfig,
    backend: Box<dyn Backend>,
    cache: Cache,
    upstream_calls: AtomicU64,
    cache_hits: AtomicU64,
    misses: AtomicU64,
    fetch_lock: Mutex<()>,
}

impl ProviderClient {
    pub fn new(
        cfg: ProviderConfig,
        backend: Box<dyn Backend>,
        cache_dir: Option<&Path>,
    ) -> Result<Self, ProviderError> {
        let kind = cfg.kind;
        if cfg.max_batch == 0 {
            return Err(ProviderError::Config { kind, message: "max_batch must be at least 1".into() });
        }
        let cache = Cache::open(kind, cache_dir).map_err(|source| ProviderError::Cache { kind, source })?;
        Ok(ProviderClient {
            cfg,
            backend,
            cache,
            upstream_calls: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
            fetch_lock: Mutex::new(()),
        })
    }

    pub fn from_config(cfg: ProviderConfig, cache_dir: Option<&Path>) -> Result<Self, ProviderError> {
        let backend = backend_for(&cfg)?;
        Self::new(cfg, backend, cache_dir)
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn id(&self) -> ProviderId {
        ProviderId { kind: self.cfg.kind, model_id: self.cfg.model_id.clone(), endpoint: self.cfg.endpoint.clone() }
    }

    pub fn counters(&self) -> Counters {
        Counters {
            upstream_calls: self.upstream_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            misses: self.misses.load(Ordering::Relaxed),
        }
    }

    fn key(&self, input: &Input) -> String {
        let mut s = String::from(self.cfg.kind.as_str());
        s.push('\0');
        s.push_str(&self.cfg.model_id);
        s.push('\0');
        s.push_str(&input.canonical());
        sha256_hex(s.as_bytes())
    }

    /// Payloads for `inputs`, in order.
    pub fn fetch(&self, inputs: &[Input]) -> Result<Vec<Payload>, ProviderError> {
        let kind = self.cfg.kind;
        for (index, input) in inputs.iter().enumerate() {
            input.check().map_err(|m| ProviderError::InvalidInput { kind, index, message: m.into() })?;
        }
        let keys: Vec<String> = inputs.iter().map(|i| self.key(i)).collect();
        let mut found: Vec<Option<Payload>> = keys.iter().map(|k| self.cache.get(k)).collect();
        let mut fetched = 0;
        if found.iter().any(Option::is_none) {
            // one fetcher at a time, so concurrent requests for the same
            // key are coalesced into a single upstream call
            let _guard = self.fetch_lock.lock().expect("fetch lock");
            for (slot, key) in found.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = self.cache.get(key);
                }
            }
            let mut pending: Vec<usize> = Vec::new();
            let mut seen = std::collections::HashSet::new();
            for (i, slot) in found.iter().enumerate() {
                if slot.is_none() && seen.insert(&keys[i]) {
                    pending.push(i);
                }
            }
            fetched = pending.len();
            self.misses.fetch_add(fetched as u64, Ordering::Relaxed);
            for chunk in pending.chunks(self.cfg.max_batch) {
                let batch: Vec<Input> = chunk.iter().map(|&i| inputs[i].clone()).collect();
                let payloads = self.call_with_retries(&batch, chunk).map_err(|e| match e {
                    // report every caller index sharing a failed key
                    ProviderError::Failed { kind, attempts, indices, message } => {
                        let failed: std::collections::HashSet<&String> = indices.iter().map(|&i| &keys[i]).collect();
                        let indices = (0..inputs.len()).filter(|&i| failed.contains(&keys[i])).collect();
                        ProviderError::Failed { kind, attempts, indices, message }
                    }
                    other => other,
                })?;
                let mut entries = Vec::with_capacity(chunk.len());
                for (&i, p) in chunk.iter().zip(payloads) {
                    p.validate().map_err(|message| ProviderError::InvalidOutput { kind, index: i, message })?;
                    entries.push((keys[i].clone(), p));
                }
                self.cache.put_all(entries).map_err(|source| ProviderError::Cache { kind, source })?;
            }
            for (slot, key) in found.iter_mut().zip(&keys) {
                if slot.is_none() {
                    *slot = self.cache.get(key);
                }
            }
        }
        // every input not sent upstream, repeats within the call included
        self.cache_hits.fetch_add((inputs.len() - fetched) as u64, Ordering::Relaxed);
        Ok(found.into_iter().map(|p| p.expect("every key resolved")).collect())
    }

    fn call_with_retries(&self, batch: &[Input], original: &[usize]) -> Result<Vec<Payload>, ProviderError> {
        let attempts = self.cfg.retries + 1;
        let mut last = None;
        for _ in 0..attempts {
            self.upstream_calls.fetch_add(1, Ordering::Relaxed);
            match self.backend.call(self.cfg.kind, batch) {
                Ok(p) if p.len() == batch.len() => return Ok(p),
                Ok(p) => last = Some(BackendError::all(format!("{} outputs for {} inputs", p.len(), batch.len()))),
                Err(e) => last = Some(e),
            }
        }
        let e = last.expect("at least one attempt");
        let indices = if e.failed.is_empty() {
            original.to_vec()
        } else {
            e.failed.iter().filter_map(|&i| original.get(i).copied()).collect()
        };
        Err(ProviderError::Failed { kind: self.cfg.kind, attempts, indices, message: e.message })
    }

    pub fn embed_batch(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let inputs: Vec<Input> = texts.iter().map(|t| Input::Text(t.clone())).collect();
        let kind = self.cfg.kind;
        let out = self.fetch(&inputs)?;
        let mut dim = None;
        out.into_iter()
            .enumerate()
            .map(|(index, p)| {
                let bad = |message: String| ProviderError::InvalidOutput { kind, index, message };
                let Payload::Vector(v) = p else { return Err(bad("not a vector".into())) };
                if *dim.get_or_insert(v.len()) != v.len() {
                    return Err(bad(format!("dimension {} differs from {}", v.len(), dim.unwrap_or(0))));
                }
                EmbeddingVector::new(v).map_err(|e| bad(e.to_string()))
            })
            .collect()
    }

    pub fn loglikelihood_batch(&self, pairs: &[(String, String)]) -> Result<Vec<Vec<f64>>, ProviderError> {
        let inputs: Vec<Input> = pairs.iter().map(|(p, r)| Input::pair(p, r)).collect();
        let kind = self.cfg.kind;
        self.fetch(&inputs)?
            .into_iter()
            .enumerate()
            .map(|(index, p)| match p {
                Payload::Logprobs(v) => Ok(v),
                _ => Err(ProviderError::InvalidOutput { kind, index, message: "not a log-probability list".into() }),
            })
            .collect()
    }

    pub fn reward_batch(&self, pairs: &[(String, String)]) -> Result<Vec<f64>, ProviderError> {
        let inputs: Vec<Input> = pairs.iter().map(|(p, r)| Input::pair(p, r)).collect();
        let kind = self.cfg.kind;
        self.fetch(&inputs)?
            .into_iter()
            .enumerate()
            .map(|(index, p)| match p {
                Payload::Scalar(v) => Ok(v),
                _ => Err(ProviderError::InvalidOutput { kind, index, message: "not a scalar".into() }),
            })
            .collect()
    }

    pub fn loglikelihood(&self, prompt: &str, response: &str) -> Result<Vec<f64>, ProviderError> {
        Ok(self.loglikelihood_batch(&[(prompt.into(), response.into())])?.remove(0))
    }

    pub fn reward(&self, prompt: &str, response: &str) -> Result<f64, ProviderError> {
        Ok(self.reward_batch(&[(prompt.into(), response.into())])?.remove(0))
    }
}
