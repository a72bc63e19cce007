//! Uniform access to the external models: a text/image embedder, a
//! captioner, a difference proposer, an image yes/no matcher (VQA) and a
//! text-only yes/no matcher over captions.
//!
//! Every request is reduced to a canonical JSON key payload (sorted keys,
//! whitespace-normalized strings). The SHA-256 of
//! `backend_id \n model_id \n kind \n canonical_payload` addresses the
//! response in an in-memory map and, when configured, an on-disk
//! [`DiskCache`]. Only validated responses are cached, so a warm call returns
//! exactly what the cold call returned.

mod cache;
mod http;
mod mock;
mod payload;

pub use cache::{CacheEntry, DiskCache};
pub use http::{HttpBackend, TOKEN_ENV};
pub use mock::{MockBackend, MockConfig, PlantedConfig};
pub use payload::{GridLayout, ImageRef, ProposerPayload};

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dataset::ImageRecord;
use crate::embedding::EmbeddingVec;
use crate::text::normalize_whitespace;
use crate::{sha256_bytes, sha256_hex};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("backend rejected the request: {0}")]
    BackendRejected(String),
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("proposer reply contained no parseable candidates")]
    EmptyProposal,
    #[error("unparseable yes/no answer: {0:?}")]
    UnparseableAnswer(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("backend configuration error: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    EmbedText,
    EmbedImage,
    Caption,
    Propose,
    Vqa,
    /// Text-only yes/no question over a caption and a description.
    Qa,
}

impl RequestKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RequestKind::EmbedText => "embed_text",
            RequestKind::EmbedImage => "embed_image",
            RequestKind::Caption => "caption",
            RequestKind::Propose => "propose",
            RequestKind::Vqa => "vqa",
            RequestKind::Qa => "qa",
        }
    }
}

/// A request as seen by a [`Backend`].
#[derive(Debug, Clone)]
pub struct BackendRequest {
    pub kind: RequestKind,
    pub model_id: String,
    /// Identity of the request; images appear only by content hash.
    pub key: Value,
    /// What a remote backend needs to serve the request (may add URIs).
    pub body: Value,
    /// SHA-256 of the canonical `key`.
    pub payload_digest: [u8; 32],
    /// Cache address: SHA-256 over backend, model, kind and canonical key.
    pub payload_hash: String,
}

pub trait Backend: Send + Sync {
    /// Stable identifier that changes whenever the backend would answer
    /// differently (endpoint, mock parameters).
    fn backend_id(&self) -> String;

    /// Serves one request. Responses are JSON objects whose shape depends on
    /// the kind: `{"embedding": [..]}`, `{"text": ".."}` or `{"answer": ".."}`.
    fn call(&self, request: &BackendRequest) -> Result<Value, GatewayError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelIds {
    pub embed: String,
    pub caption: String,
    pub propose: String,
    pub vqa: String,
    pub qa: String,
}

impl Default for ModelIds {
    fn default() -> Self {
        ModelIds {
            embed: "clip-vit-g-14".into(),
            caption: "blip2".into(),
            propose: "gpt-4".into(),
            vqa: "llava-1.5".into(),
            qa: "vicuna-1.5".into(),
        }
    }
}

impl ModelIds {
    fn for_kind(&self, kind: RequestKind) -> &str {
        match kind {
            RequestKind::EmbedText | RequestKind::EmbedImage => &self.embed,
            RequestKind::Caption => &self.caption,
            RequestKind::Propose => &self.propose,
            RequestKind::Vqa => &self.vqa,
            RequestKind::Qa => &self.qa,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GatewayOptions {
    pub models: ModelIds,
    /// Declared embedding length; responses of any other length are errors.
    pub embedding_dims: Option<usize>,
    pub max_inflight: usize,
}

impl Default for GatewayOptions {
    fn default() -> Self {
        GatewayOptions {
            models: ModelIds::default(),
            embedding_dims: None,
            max_inflight: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub image_id: String,
    pub text: String,
    pub model_id: String,
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    backend_id: String,
    options: GatewayOptions,
    memory: Mutex<HashMap<String, Arc<Value>>>,
    disk: Option<DiskCache>,
    calls: AtomicU64,
    hits: AtomicU64,
    pool: rayon::ThreadPool,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("backend_id", &self.backend_id)
            .field("options", &self.options)
            .field("disk", &self.disk)
            .finish_non_exhaustive()
    }
}

impl Gateway {
    pub fn new(
        backend: Arc<dyn Backend>,
        options: GatewayOptions,
        disk: Option<DiskCache>,
    ) -> Result<Self, GatewayError> {
        if options.max_inflight == 0 {
            return Err(GatewayError::Config("max_inflight must be at least 1".into()));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.max_inflight)
            .thread_name(|i| format!("gateway-{i}"))
            .build()
            .map_err(|e| GatewayError::Config(e.to_string()))?;
        Ok(Gateway {
            backend_id: backend.backend_id(),
            backend,
            options,
            memory: Mutex::new(HashMap::new()),
            disk,
            calls: AtomicU64::new(0),
            hits: AtomicU64::new(0),
            pool,
        })
    }

    pub fn backend_id(&self) -> &str {
        &self.backend_id
    }

    pub fn models(&self) -> &ModelIds {
        &self.options.models
    }

    /// Requests that reached the backend.
    pub fn backend_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn cache_hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Maps `f` over `items` on at most `max_inflight` worker threads,
    /// returning results in input order.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    pub fn embed_text(&self, text: &str) -> Result<EmbeddingVec, GatewayError> {
        let text = normalize_whitespace(text);
        if text.is_empty() {
            return Err(GatewayError::InvalidRequest("text to embed is empty".into()));
        }
        let key = json!({ "text": text });
        self.fetch(RequestKind::EmbedText, key.clone(), key, |v| self.parse_embedding(v))
    }

    /// Embeds an image; the request is keyed by content hash, never by URI.
    pub fn embed_image(&self, image: &ImageRecord) -> Result<EmbeddingVec, GatewayError> {
        let key = json!({ "content_hash": image.content_hash });
        let body = json!({ "image": ImageRef::from(image) });
        self.fetch(RequestKind::EmbedImage, key, body, |v| self.parse_embedding(v))
    }

    pub fn caption_image(&self, image: &ImageRecord, prompt: &str) -> Result<Caption, GatewayError> {
        let prompt = normalize_whitespace(prompt);
        let key = json!({ "content_hash": image.content_hash, "prompt": prompt });
        let body = json!({ "image": ImageRef::from(image), "prompt": prompt });
        let text = self.fetch(RequestKind::Caption, key, body, parse_text)?;
        Ok(Caption {
            image_id: image.id.clone(),
            text,
            model_id: self.options.models.caption.clone(),
        })
    }

    /// Asks the proposer for difference descriptions and parses at most `k`
    /// candidates out of its reply.
    pub fn propose_differences(
        &self,
        prompt: &str,
        k: usize,
        payload: &ProposerPayload,
    ) -> Result<Vec<String>, GatewayError> {
        if k == 0 {
            return Err(GatewayError::InvalidRequest("k must be at least 1".into()));
        }
        payload.validate().map_err(GatewayError::InvalidRequest)?;
        let payload = serde_json::to_value(payload).expect("payload serializes");
        let key = json!({ "prompt": normalize_whitespace(prompt), "k": k, "payload": payload });
        let reply = self.fetch(RequestKind::Propose, key.clone(), key, |v| {
            let text = parse_text(v)?;
            let candidates = parse_proposals(&text, k);
            if candidates.is_empty() {
                Err(GatewayError::EmptyProposal)
            } else {
                Ok(text)
            }
        })?;
        Ok(parse_proposals(&reply, k))
    }

    /// Binary image/description match through the VQA model.
    pub fn vqa_match(&self, image: &ImageRecord, description: &str, question: &str) -> Result<bool, GatewayError> {
        let description = normalize_whitespace(description);
        if description.is_empty() {
            return Err(GatewayError::InvalidRequest("description is empty".into()));
        }
        let question = normalize_whitespace(question);
        let key = json!({
            "content_hash": image.content_hash,
            "description": description,
            "question": question,
        });
        let body = json!({
            "image": ImageRef::from(image),
            "description": description,
            "question": question,
        });
        self.fetch(RequestKind::Vqa, key, body, parse_answer)
    }

    /// Binary caption/description match through the text-only QA model.
    pub fn caption_qa(&self, caption: &str, description: &str, question: &str) -> Result<bool, GatewayError> {
        let description = normalize_whitespace(description);
        if description.is_empty() {
            return Err(GatewayError::InvalidRequest("description is empty".into()));
        }
        let key = json!({
            "caption": normalize_whitespace(caption),
            "description": description,
            "question": normalize_whitespace(question),
        });
        self.fetch(RequestKind::Qa, key.clone(), key, parse_answer)
    }

    fn fetch<T>(
        &self,
        kind: RequestKind,
        key: Value,
        body: Value,
        parse: impl Fn(&Value) -> Result<T, GatewayError>,
    ) -> Result<T, GatewayError> {
        let model_id = self.options.models.for_kind(kind).to_string();
        let canonical = canonical_json(&key);
        let payload_hash = sha256_hex(format!(
            "{}\n{}\n{}\n{}",
            self.backend_id,
            model_id,
            kind.as_str(),
            canonical
        ));

        let cached = self.memory.lock().unwrap().get(&payload_hash).cloned();
        if let Some(value) = cached {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return parse(&value);
        }
        if let Some(entry) = self.disk.as_ref().and_then(|d| d.get(kind, &payload_hash)) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            let value = Arc::new(entry.response);
            self.memory.lock().unwrap().insert(payload_hash, Arc::clone(&value));
            return parse(&value);
        }

        let request = BackendRequest {
            kind,
            model_id,
            payload_digest: sha256_bytes(canonical.as_bytes()),
            key,
            body,
            payload_hash: payload_hash.clone(),
        };
        self.calls.fetch_add(1, Ordering::Relaxed);
        let response = self.backend.call(&request)?;
        let parsed = parse(&response)?;

        if let Some(disk) = &self.disk {
            let entry = CacheEntry {
                kind,
                payload_hash: payload_hash.clone(),
                created_at: std::time::SystemTime::now()
                    .duration_since(std::time::UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
                response,
            };
            disk.put(&entry).map_err(|e| GatewayError::Cache(e.to_string()))?;
            self.memory
                .lock()
                .unwrap()
                .insert(payload_hash, Arc::new(entry.response));
        } else {
            self.memory.lock().unwrap().insert(payload_hash, Arc::new(response));
        }
        Ok(parsed)
    }

    fn parse_embedding(&self, value: &Value) -> Result<EmbeddingVec, GatewayError> {
        let values: Vec<f64> = value
            .get("embedding")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::BackendRejected("response has no `embedding` array".into()))?
            .iter()
            .map(|v| {
                v.as_f64()
                    .ok_or_else(|| GatewayError::BackendRejected("non-numeric embedding value".into()))
            })
            .collect::<Result<_, _>>()?;
        if let Some(expected) = self.options.embedding_dims {
            if values.len() != expected {
                return Err(GatewayError::DimensionMismatch {
                    expected,
                    got: values.len(),
                });
            }
        }
        EmbeddingVec::new(self.options.models.embed.clone(), values)
            .map_err(|e| GatewayError::BackendRejected(e.to_string()))
    }
}

fn parse_text(value: &Value) -> Result<String, GatewayError> {
    let text = value
        .get("text")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BackendRejected("response has no `text` field".into()))?;
    if text.trim().is_empty() {
        return Err(GatewayError::BackendRejected("response text is empty".into()));
    }
    Ok(text.to_string())
}

fn parse_answer(value: &Value) -> Result<bool, GatewayError> {
    let answer = value
        .get("answer")
        .and_then(Value::as_str)
        .ok_or_else(|| GatewayError::BackendRejected("response has no `answer` field".into()))?;
    parse_yes_no(answer)
}

/// Reads a yes/no answer from its first word, ignoring case and punctuation.
pub fn parse_yes_no(answer: &str) -> Result<bool, GatewayError> {
    let first = answer
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())
        .map(str::to_lowercase);
    match first.as_deref() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(GatewayError::UnparseableAnswer(answer.to_string())),
    }
}

/// Extracts candidate descriptions from a proposer reply, keeping at most `k`.
///
/// A reply that is a JSON array of strings is taken as is. Otherwise every
/// non-empty line is a candidate after stripping list markers (`1.`, `2)`,
/// `-`, `*`, `•`) and surrounding quotes; lines ending in `:` are treated as
/// headings and skipped.
pub fn parse_proposals(reply: &str, k: usize) -> Vec<String> {
    let trimmed = reply.trim();
    let raw: Vec<String> = match serde_json::from_str::<Vec<String>>(trimmed) {
        Ok(list) => list,
        Err(_) => trimmed
            .lines()
            .map(str::trim)
            .filter(|l| !l.ends_with(':'))
            .map(strip_list_marker)
            .map(str::to_string)
            .collect(),
    };
    raw.iter()
        .map(|s| normalize_whitespace(strip_quotes(s.trim())))
        .filter(|s| !s.is_empty())
        .take(k)
        .collect()
}

fn strip_list_marker(line: &str) -> &str {
    let line = line.trim_start();
    if let Some(rest) = line.strip_prefix(['-', '*', '•']) {
        return rest.trim_start();
    }
    let digits = line.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 {
        let rest = &line[digits..];
        if let Some(rest) = rest.strip_prefix(['.', ')', ':']) {
            return rest.trim_start();
        }
    }
    line
}

fn strip_quotes(s: &str) -> &str {
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”')] {
        if s.len() >= 2 && s.starts_with(open) && s.ends_with(close) {
            return &s[open.len_utf8()..s.len() - close.len_utf8()];
        }
    }
    s
}

/// Serializes `value` with object keys sorted and every string
/// whitespace-normalized.
pub fn canonical_json(value: &Value) -> String {
    let mut out = String::new();
    write_canonical(value, &mut out);
    out
}

fn write_canonical(value: &Value, out: &mut String) {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                let _ = write!(out, "{}:", Value::String((*k).clone()));
                write_canonical(&map[*k], out);
            }
            out.push('}');
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_canonical(item, out);
            }
            out.push(']');
        }
        Value::String(s) => {
            let _ = write!(out, "{}", Value::String(normalize_whitespace(s)));
        }
        other => {
            let _ = write!(out, "{other}");
        }
    }
}
