//! The web environment workers query: a live HTTP implementation, a replayed
//! fixture corpus, and a recorder that turns live traffic into a corpus.
//!
//! A corpus is a directory of JSON records
//! `{key, method, request, response, meta: {status, latency_ms, error?}}`
//! named `{key}.json`, where `key = sha256(method + "\n" + normalised request)`.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;
use crate::lock::atomic_write;
use crate::scoring::url::normalize_url;
use crate::sha256_hex;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EnvError {
    #[error("no fixture recorded for {method} {request:?}")]
    FixtureMiss { method: String, request: String },
    #[error("request timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("corpus error: {0}")]
    Corpus(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub url: String,
    pub snippet: String,
}

pub trait WebEnvironment: Send + Sync {
    fn search(&self, query: &str, clock: &Clock) -> Result<Vec<SearchHit>, EnvError>;
    fn fetch(&self, url: &str, clock: &Clock) -> Result<String, EnvError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MissPolicy {
    #[default]
    Error,
    Empty,
}

impl std::str::FromStr for MissPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "error" => Ok(MissPolicy::Error),
            "empty" => Ok(MissPolicy::Empty),
            other => Err(format!("unknown miss policy {other:?} (expected error|empty)")),
        }
    }
}

pub fn normalize_request(method: &str, request: &str) -> String {
    match method {
        "fetch" => normalize_url(request.trim()),
        _ => request.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase(),
    }
}

pub fn fixture_key(method: &str, request: &str) -> String {
    sha256_hex(format!("{method}\n{}", normalize_request(method, request)).as_bytes())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordStatus {
    Ok,
    Timeout,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordMeta {
    pub status: RecordStatus,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub key: String,
    pub method: String,
    pub request: String,
    /// Search: array of hits. Fetch: page text as a string.
    pub response: serde_json::Value,
    pub meta: RecordMeta,
}

impl FixtureRecord {
    pub fn search(query: &str, hits: &[SearchHit]) -> Self {
        Self::ok("search", query, serde_json::to_value(hits).expect("hits serialise"))
    }

    pub fn page(url: &str, text: &str) -> Self {
        Self::ok("fetch", url, serde_json::Value::String(text.to_string()))
    }

    fn ok(method: &str, request: &str, response: serde_json::Value) -> Self {
        FixtureRecord {
            key: fixture_key(method, request),
            method: method.into(),
            request: request.into(),
            response,
            meta: RecordMeta { status: RecordStatus::Ok, latency_ms: 0, error: None },
        }
    }

    pub fn with_latency(mut self, ms: u64) -> Self {
        self.meta.latency_ms = ms;
        self
    }

    pub fn save(&self, dir: &Path) -> std::io::Result<()> {
        fs::create_dir_all(dir)?;
        let text = serde_json::to_string_pretty(self).expect("record serialises");
        atomic_write(&dir.join(format!("{}.json", self.key)), text.as_bytes())
    }
}

/// Replays a recorded corpus. A pure function of (request, corpus); recorded
/// latency is charged to the caller's clock.
pub struct FixtureEnv {
    records: HashMap<String, FixtureRecord>,
    miss: MissPolicy,
}

impl FixtureEnv {
    pub fn new(records: impl IntoIterator<Item = FixtureRecord>, miss: MissPolicy) -> Self {
        FixtureEnv { records: records.into_iter().map(|r| (r.key.clone(), r)).collect(), miss }
    }

    pub fn load(dir: &Path, miss: MissPolicy) -> Result<Self, EnvError> {
        let entries = fs::read_dir(dir).map_err(|e| EnvError::Corpus(format!("{}: {e}", dir.display())))?;
        let mut records = Vec::new();
        for e in entries {
            let path = e.map_err(|e| EnvError::Corpus(e.to_string()))?.path();
            if path.extension().is_some_and(|x| x == "json") {
                let text = fs::read_to_string(&path).map_err(|e| EnvError::Corpus(e.to_string()))?;
                let rec: FixtureRecord =
                    serde_json::from_str(&text).map_err(|e| EnvError::Corpus(format!("{}: {e}", path.display())))?;
                records.push(rec);
            }
        }
        Ok(Self::new(records, miss))
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn lookup(&self, method: &str, request: &str, clock: &Clock) -> Result<Option<&FixtureRecord>, EnvError> {
        let Some(rec) = self.records.get(&fixture_key(method, request)) else {
            return match self.miss {
                MissPolicy::Error => {
                    Err(EnvError::FixtureMiss { method: method.into(), request: request.into() })
                }
                MissPolicy::Empty => Ok(None),
            };
        };
        if rec.meta.latency_ms > 0 && clock.is_fake() {
            clock.sleep(Duration::from_millis(rec.meta.latency_ms));
        }
        match rec.meta.status {
            RecordStatus::Ok => Ok(Some(rec)),
            RecordStatus::Timeout => Err(EnvError::Timeout),
            RecordStatus::Error => Err(EnvError::Transport(rec.meta.error.clone().unwrap_or_default())),
        }
    }
}

impl WebEnvironment for FixtureEnv {
    fn search(&self, query: &str, clock: &Clock) -> Result<Vec<SearchHit>, EnvError> {
        match self.lookup("search", query, clock)? {
            None => Ok(Vec::new()),
            Some(r) => serde_json::from_value(r.response.clone()).map_err(|e| EnvError::Corpus(e.to_string())),
        }
    }

    fn fetch(&self, url: &str, clock: &Clock) -> Result<String, EnvError> {
        match self.lookup("fetch", url, clock)? {
            None => Ok(String::new()),
            Some(r) => match &r.response {
                serde_json::Value::String(s) => Ok(s.clone()),
                other => Ok(other.to_string()),
            },
        }
    }
}

/// Wraps another environment and persists every exchange, failures included.
pub struct RecordingEnv {
    inner: Arc<dyn WebEnvironment>,
    out: PathBuf,
}

impl RecordingEnv {
    pub fn new(inner: Arc<dyn WebEnvironment>, out: impl Into<PathBuf>) -> Self {
        RecordingEnv { inner, out: out.into() }
    }

    fn record<T: Serialize>(&self, method: &str, request: &str, result: &Result<T, EnvError>, latency_ms: u64) {
        let (response, meta) = match result {
            Ok(v) => (
                serde_json::to_value(v).unwrap_or_default(),
                RecordMeta { status: RecordStatus::Ok, latency_ms, error: None },
            ),
            Err(EnvError::Timeout) => {
                (serde_json::Value::Null, RecordMeta { status: RecordStatus::Timeout, latency_ms, error: None })
            }
            Err(e) => (
                serde_json::Value::Null,
                RecordMeta { status: RecordStatus::Error, latency_ms, error: Some(e.to_string()) },
            ),
        };
        let rec = FixtureRecord {
            key: fixture_key(method, request),
            method: method.into(),
            request: request.into(),
            response,
            meta,
        };
        if let Err(e) = rec.save(&self.out) {
            log::warn!("could not record {method} {request:?}: {e}");
        }
    }
}

impl WebEnvironment for RecordingEnv {
    fn search(&self, query: &str, clock: &Clock) -> Result<Vec<SearchHit>, EnvError> {
        let t0 = clock.now_ms();
        let r = self.inner.search(query, clock);
        self.record("search", query, &r, clock.now_ms().saturating_sub(t0));
        r
    }

    fn fetch(&self, url: &str, clock: &Clock) -> Result<String, EnvError> {
        let t0 = clock.now_ms();
        let r = self.inner.fetch(url, clock);
        self.record("fetch", url, &r, clock.now_ms().saturating_sub(t0));
        r
    }
}

/// One request to replay through a recorder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoggedRequest {
    pub method: String,
    pub request: String,
}

/// Sends every logged request through `live` and writes the corpus to `out`.
/// Returns the number of distinct records written.
pub fn record_fixture(
    live: Arc<dyn WebEnvironment>,
    requests: &[LoggedRequest],
    out: &Path,
    clock: &Clock,
) -> Result<usize, EnvError> {
    let rec = RecordingEnv::new(live, out);
    let mut keys = std::collections::BTreeSet::new();
    for r in requests {
        match r.method.as_str() {
            "search" => drop(rec.search(&r.request, clock)),
            "fetch" => drop(rec.fetch(&r.request, clock)),
            other => return Err(EnvError::Corpus(format!("unknown method {other:?}"))),
        }
        keys.insert(fixture_key(&r.method, &r.request));
    }
    Ok(keys.len())
}

/// HTTP search + page fetch. Search endpoint from `SEARCH_API_URL`
/// (`GET ?q=` → `{results: [{title, url, snippet}]}`), key from `SEARCH_API_KEY`.
pub struct LiveEnv {
    search_url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    politeness: Duration,
    last_request: Mutex<Option<Instant>>,
    max_page_bytes: usize,
}

#[derive(Deserialize)]
struct SearchReply {
    results: Vec<SearchHit>,
}

impl LiveEnv {
    pub fn new(search_url: impl Into<String>, api_key: Option<String>, timeout: Duration, politeness: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().new_agent();
        LiveEnv {
            search_url: search_url.into(),
            api_key,
            agent,
            politeness,
            last_request: Mutex::new(None),
            max_page_bytes: 2 << 20,
        }
    }

    pub fn from_env(timeout: Duration, politeness: Duration) -> Option<Self> {
        let url = std::env::var("SEARCH_API_URL").ok()?;
        Some(Self::new(url, std::env::var("SEARCH_API_KEY").ok(), timeout, politeness))
    }

    /// Global rate limit shared by all workers.
    fn wait_turn(&self) {
        let mut last = self.last_request.lock().unwrap();
        if let Some(t) = *last {
            let since = t.elapsed();
            if since < self.politeness {
                std::thread::sleep(self.politeness - since);
            }
        }
        *last = Some(Instant::now());
    }
}

fn transport(e: ureq::Error) -> EnvError {
    match e {
        ureq::Error::Timeout(_) => EnvError::Timeout,
        other => EnvError::Transport(other.to_string()),
    }
}

/// Drops tags, scripts and styles; collapses blank runs.
pub fn html_to_text(html: &str) -> String {
    use std::sync::LazyLock;
    static BLOCKS: LazyLock<regex::Regex> =
        LazyLock::new(|| regex::Regex::new(r"(?is)<(script|style)[^>]*>.*?</(script|style)>").unwrap());
    static TAGS: LazyLock<regex::Regex> = LazyLock::new(|| regex::Regex::new(r"(?s)<[^>]+>").unwrap());
    let no_blocks = BLOCKS.replace_all(html, " ");
    let text = TAGS.replace_all(&no_blocks, "\n");
    let text = text.replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">").replace("&nbsp;", " ");
    text.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join("\n")
}

impl WebEnvironment for LiveEnv {
    fn search(&self, query: &str, _clock: &Clock) -> Result<Vec<SearchHit>, EnvError> {
        self.wait_turn();
        let mut req = self.agent.get(&self.search_url).query("q", query);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {k}"));
        }
        let reply: SearchReply = req
            .call()
            .map_err(transport)?
            .body_mut()
            .read_json()
            .map_err(|e| EnvError::Transport(e.to_string()))?;
        Ok(reply.results)
    }

    fn fetch(&self, url: &str, _clock: &Clock) -> Result<String, EnvError> {
        self.wait_turn();
        let body = self
            .agent
            .get(url)
            .call()
            .map_err(transport)?
            .body_mut()
            .with_config()
            .limit(self.max_page_bytes as u64)
            .read_to_string()
            .map_err(|e| EnvError::Transport(e.to_string()))?;
        Ok(html_to_text(&body))
    }
}
