//! Commonsense text for objects and object pairs, and the hashed text
//! embedding that turns it into feature vectors.
//!
//! The offline backend fills fixed templates from a bundled lexicon and never
//! touches the network. The external backend asks an OpenAI-compatible chat
//! endpoint and keeps every answer in a file cache keyed by the SHA-256 of
//! the request, so a warm cache makes runs hermetic.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::defaults;

const BUNDLED_LEXICON: &str = include_str!("../data/lexicon.json");

pub const ENV_ENDPOINT: &str = "CSG_LLM_ENDPOINT";
pub const ENV_KEY: &str = "CSG_LLM_KEY";
pub const ENV_MODEL: &str = "CSG_LLM_MODEL";
const DEFAULT_MODEL: &str = "gpt-4";

const TEMPLATE_LOCATION: &str = "object-location/1";
const TEMPLATE_USAGE: &str = "object-usage/1";
const TEMPLATE_EDGE_GEO: &str = "edge-geometric/1";
const TEMPLATE_EDGE_FUN: &str = "edge-functional/1";

#[derive(Debug, Error)]
pub enum KnowledgeError {
    #[error("knowledge backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("no known object category in {0:?}")]
    NoCategoryFound(String),
    #[error("empty {0}")]
    EmptyInput(&'static str),
    #[error("lexicon error: {0}")]
    Lexicon(String),
    #[error("cache error at {path}: {source}")]
    Cache {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectKnowledge {
    pub location_text: String,
    pub usage_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeKnowledge {
    pub geometric_text: String,
    pub functional_text: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetQuery {
    pub raw_text: String,
    pub category: String,
    pub hint: Option<String>,
}

impl TargetQuery {
    /// Query naming a category directly, as when the simulator supplies it.
    pub fn category(category: &str) -> Self {
        Self {
            raw_text: category.to_string(),
            category: category.to_string(),
            hint: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Offline,
    External,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProviderConfig {
    pub backend: Backend,
    pub cache_dir: PathBuf,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub model: String,
    pub d_feat: usize,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            backend: Backend::Offline,
            cache_dir: PathBuf::from(".csg-cache"),
            endpoint: None,
            api_key: None,
            model: DEFAULT_MODEL.to_string(),
            d_feat: defaults::D_FEAT,
        }
    }
}

impl ProviderConfig {
    /// External backend configured from `CSG_LLM_ENDPOINT`, `CSG_LLM_KEY` and
    /// `CSG_LLM_MODEL`.
    pub fn external_from_env(cache_dir: impl Into<PathBuf>) -> Self {
        Self {
            backend: Backend::External,
            cache_dir: cache_dir.into(),
            endpoint: std::env::var(ENV_ENDPOINT).ok(),
            api_key: std::env::var(ENV_KEY).ok(),
            model: std::env::var(ENV_MODEL).unwrap_or_else(|_| DEFAULT_MODEL.to_string()),
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub location: String,
    pub usage: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairEntry {
    pub geometric: String,
    pub functional: String,
}

/// Category phrases, room names and optional pair phrases. Pair keys are the
/// two categories in sorted order joined by `|`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lexicon {
    pub rooms: Vec<String>,
    pub objects: BTreeMap<String, LexiconEntry>,
    #[serde(default)]
    pub pairs: BTreeMap<String, PairEntry>,
}

impl Lexicon {
    pub fn bundled() -> Self {
        Self::from_json(BUNDLED_LEXICON).expect("bundled lexicon is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, KnowledgeError> {
        let lex: Lexicon = serde_json::from_str(text).map_err(|e| KnowledgeError::Lexicon(e.to_string()))?;
        if lex.objects.is_empty() {
            return Err(KnowledgeError::Lexicon("no object entries".into()));
        }
        for (cat, e) in &lex.objects {
            if cat.trim().is_empty() || e.location.trim().is_empty() || e.usage.trim().is_empty() {
                return Err(KnowledgeError::Lexicon(format!("incomplete entry for {cat:?}")));
            }
        }
        Ok(lex)
    }

    pub fn load(path: &Path) -> Result<Self, KnowledgeError> {
        let text = fs::read_to_string(path).map_err(|source| KnowledgeError::Cache {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    fn pair(&self, a: &str, b: &str) -> Option<&PairEntry> {
        self.pairs.get(&format!("{a}|{b}"))
    }
}

/// Text completion service used by the external backend.
pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, KnowledgeError>;
}

/// Chat-completions client for OpenAI-compatible endpoints.
pub struct HttpClient {
    endpoint: String,
    api_key: Option<String>,
    model: String,
}

impl HttpClient {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
        }
    }
}

impl LlmClient for HttpClient {
    fn complete(&self, prompt: &str) -> Result<String, KnowledgeError> {
        let body = serde_json::json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": prompt}],
        });
        let mut req = ureq::post(&self.endpoint).timeout(std::time::Duration::from_secs(60));
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        let resp = req
            .send_json(body)
            .map_err(|e| KnowledgeError::BackendUnavailable(e.to_string()))?;
        let value: serde_json::Value = resp
            .into_json()
            .map_err(|e| KnowledgeError::BackendUnavailable(e.to_string()))?;
        value["choices"][0]["message"]["content"]
            .as_str()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .ok_or_else(|| KnowledgeError::BackendUnavailable("response has no message content".into()))
    }
}

/// Source of commonsense text. Cheap to clone.
#[derive(Clone)]
pub struct Provider {
    cfg: ProviderConfig,
    lexicon: Arc<Lexicon>,
    client: Option<Arc<dyn LlmClient>>,
}

impl std::fmt::Debug for Provider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Provider")
            .field("cfg", &self.cfg)
            .field("client", &self.client.is_some())
            .finish()
    }
}

impl Default for Provider {
    fn default() -> Self {
        Self::offline()
    }
}

impl Provider {
    pub fn offline() -> Self {
        Self::new(ProviderConfig::default(), Lexicon::bundled())
    }

    pub fn new(cfg: ProviderConfig, lexicon: Lexicon) -> Self {
        let client: Option<Arc<dyn LlmClient>> = match (&cfg.backend, &cfg.endpoint) {
            (Backend::External, Some(ep)) => Some(Arc::new(HttpClient::new(ep.clone(), cfg.api_key.clone(), cfg.model.clone()))),
            _ => None,
        };
        Self {
            cfg,
            lexicon: Arc::new(lexicon),
            client,
        }
    }

    /// Replaces the network client (used with stub clients in tests).
    pub fn with_client(mut self, client: Arc<dyn LlmClient>) -> Self {
        self.client = Some(client);
        self
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn lexicon(&self) -> &Lexicon {
        &self.lexicon
    }

    pub fn d_feat(&self) -> usize {
        self.cfg.d_feat
    }

    pub fn describe_object(&self, category: &str, room_hint: Option<&str>) -> Result<ObjectKnowledge, KnowledgeError> {
        let category = category.trim();
        if category.is_empty() {
            return Err(KnowledgeError::EmptyInput("category"));
        }
        match self.cfg.backend {
            Backend::Offline => {
                let (location, usage) = match self.lexicon.objects.get(category) {
                    Some(e) => (e.location.as_str(), e.usage.as_str()),
                    None => (category, category),
                };
                let location_text = match room_hint {
                    Some(room) => format!("{category} typically located: in the {room}, {location}"),
                    None => format!("{category} typically located: {location}"),
                };
                Ok(ObjectKnowledge {
                    location_text,
                    usage_text: format!("{category} typically used for: {usage}"),
                })
            }
            Backend::External => {
                let room = room_hint.unwrap_or("");
                let place = if room.is_empty() { String::new() } else { format!(" in the {room}") };
                let location_text = self.cached_completion(
                    TEMPLATE_LOCATION,
                    &[category, room],
                    &format!("In one sentence, where is a {category} typically located{place} in a home?"),
                )?;
                let usage_text = self.cached_completion(
                    TEMPLATE_USAGE,
                    &[category, room],
                    &format!("In one sentence, what is a {category}{place} typically used for?"),
                )?;
                Ok(ObjectKnowledge { location_text, usage_text })
            }
        }
    }

    /// Describes a category pair. The pair is put in sorted order first, so
    /// both argument orders give the same text.
    pub fn describe_edge(&self, cat_a: &str, cat_b: &str) -> Result<EdgeKnowledge, KnowledgeError> {
        let (a, b) = (cat_a.trim(), cat_b.trim());
        if a.is_empty() || b.is_empty() {
            return Err(KnowledgeError::EmptyInput("category"));
        }
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        match self.cfg.backend {
            Backend::Offline => {
                if let Some(p) = self.lexicon.pair(a, b) {
                    return Ok(EdgeKnowledge {
                        geometric_text: format!("{a} and {b}: {}", p.geometric),
                        functional_text: format!("{a} and {b}: {}", p.functional),
                    });
                }
                let usage = |c: &str| self.lexicon.objects.get(c).map_or(c.to_string(), |e| e.usage.clone());
                Ok(EdgeKnowledge {
                    geometric_text: format!("{a} and {b}: found in the same room"),
                    functional_text: format!("{a} and {b}: {a} for {}; {b} for {}", usage(a), usage(b)),
                })
            }
            Backend::External => {
                let geometric_text = self.cached_completion(
                    TEMPLATE_EDGE_GEO,
                    &[a, b],
                    &format!("In one sentence, describe the usual spatial relationship between a {a} and a {b} in a home."),
                )?;
                let functional_text = self.cached_completion(
                    TEMPLATE_EDGE_FUN,
                    &[a, b],
                    &format!("In one sentence, describe how a {a} and a {b} are used together, if at all."),
                )?;
                Ok(EdgeKnowledge {
                    geometric_text,
                    functional_text,
                })
            }
        }
    }

    /// Extracts the category (earliest match, then the longest) and an
    /// optional room name from a free-form request.
    pub fn parse_target_query(&self, raw: &str) -> Result<TargetQuery, KnowledgeError> {
        if raw.trim().is_empty() {
            return Err(KnowledgeError::EmptyInput("query"));
        }
        let tokens = tokenize(raw);
        let category = earliest_longest(&tokens, self.lexicon.objects.keys())
            .ok_or_else(|| KnowledgeError::NoCategoryFound(raw.to_string()))?;
        let hint = earliest_longest(&tokens, self.lexicon.rooms.iter());
        Ok(TargetQuery {
            raw_text: raw.to_string(),
            category,
            hint,
        })
    }

    /// Cache file path for a request.
    pub fn cache_path(&self, template: &str, inputs: &[&str]) -> PathBuf {
        self.cfg.cache_dir.join(format!("{}.txt", cache_key("external", template, inputs)))
    }

    fn cached_completion(&self, template: &str, inputs: &[&str], prompt: &str) -> Result<String, KnowledgeError> {
        let path = self.cache_path(template, inputs);
        match fs::read_to_string(&path) {
            Ok(text) => return Ok(text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {}
            Err(source) => return Err(KnowledgeError::Cache { path, source }),
        }
        let client = self.client.as_ref().ok_or_else(|| {
            KnowledgeError::BackendUnavailable(format!("no cache entry and {ENV_ENDPOINT} is not set"))
        })?;
        let text = client.complete(prompt)?;
        crate::io::write_atomic(&path, text.as_bytes()).map_err(|source| KnowledgeError::Cache { path, source })?;
        Ok(text)
    }
}

/// Hex SHA-256 over the backend name, template id and inputs, separated by
/// unit-separator bytes.
pub fn cache_key(backend: &str, template: &str, inputs: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(backend.as_bytes());
    h.update([0x1f]);
    h.update(template.as_bytes());
    for i in inputs {
        h.update([0x1f]);
        h.update(i.as_bytes());
    }
    hex::encode(h.finalize())
}

fn earliest_longest<'a>(tokens: &[String], phrases: impl Iterator<Item = &'a String>) -> Option<String> {
    let mut best: Option<(usize, usize, &String)> = None;
    for phrase in phrases {
        let pt = tokenize(phrase);
        if pt.is_empty() || pt.len() > tokens.len() {
            continue;
        }
        if let Some(start) = (0..=tokens.len() - pt.len()).find(|&s| tokens[s..s + pt.len()] == pt[..]) {
            let better = match best {
                None => true,
                Some((bs, bl, _)) => start < bs || (start == bs && pt.len() > bl),
            };
            if better {
                best = Some((start, pt.len(), phrase));
            }
        }
    }
    best.map(|(_, _, p)| p.clone())
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Signed feature hashing of the lowercase alphanumeric tokens, L2
/// normalized. Token `t` lands in bucket `fnv1a(t) mod d` with sign `-1` when
/// the hash's top bit is set. Empty text (or text whose buckets cancel)
/// embeds to the zero vector.
pub fn embed_text(text: &str, d: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    if d == 0 {
        return v;
    }
    for tok in tokenize(text) {
        let h = fnv1a(tok.as_bytes());
        let sign = if h >> 63 == 1 { -1.0 } else { 1.0 };
        v[(h % d as u64) as usize] += sign;
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// `[embed(category), embed(location), embed(usage)]`.
pub fn encode_node(category: &str, k: &ObjectKnowledge, d: usize) -> Vec<f64> {
    let mut out = embed_text(category, d);
    out.extend(embed_text(&k.location_text, d));
    out.extend(embed_text(&k.usage_text, d));
    out
}

/// `[embed(geometric), embed(functional)]`.
pub fn encode_edge(k: &EdgeKnowledge, d: usize) -> Vec<f64> {
    let mut out = embed_text(&k.geometric_text, d);
    out.extend(embed_text(&k.functional_text, d));
    out
}
