//! Text-generation backends: the frozen models behind every agent role.
//!
//! [`ScriptedBackend`] replays a playbook of prompt-pattern rules and is what
//! tests and fixture runs use; [`HttpBackend`] speaks a small JSON protocol
//! (`{prompt, max_tokens, temperature, timeout_s}` → `{text}` or `{error}`).

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Clock;

pub const DEFAULT_GENERATION_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("generation timed out")]
    Timeout,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("backend error: {0}")]
    Remote(String),
    #[error("no playbook rule matches the prompt")]
    NoMatch,
    #[error("invalid playbook: {0}")]
    Playbook(String),
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerationRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub timeout_s: u64,
    /// Clock the caller measures against; scripted delays advance it.
    #[serde(skip)]
    pub clock: Clock,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        GenerationRequest {
            prompt: prompt.into(),
            max_tokens: 4096,
            temperature: 0.0,
            timeout_s: DEFAULT_GENERATION_TIMEOUT.as_secs(),
            clock: Clock::System,
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }
}

pub trait GenerationBackend: Send + Sync {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError>;
}

/// Calls `backend` and enforces the request timeout against the request clock.
pub fn generate_bounded(
    backend: &std::sync::Arc<dyn GenerationBackend>,
    req: GenerationRequest,
) -> Result<String, BackendError> {
    let timeout = Duration::from_secs(req.timeout_s);
    let clock = req.clock.clone();
    let b = backend.clone();
    match clock.run_with_timeout(timeout, move || b.generate(&req)) {
        Ok(r) => r,
        Err(_) => Err(BackendError::Timeout),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedResponse {
    Text(String),
    Detailed {
        #[serde(default)]
        text: Option<String>,
        #[serde(default)]
        error: Option<String>,
        #[serde(default)]
        delay_ms: u64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaybookRule {
    /// Regex searched in the prompt. Each distinct matched text keeps its own
    /// position in `responses`, so one rule can serve many workers.
    pub when: String,
    pub responses: Vec<ScriptedResponse>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Playbook {
    pub rules: Vec<PlaybookRule>,
    #[serde(default)]
    pub default: Option<String>,
}

impl Playbook {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|e| BackendError::Playbook(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Playbook(e.to_string()))
    }
}

/// Deterministic backend driven by a [`Playbook`]. Rules are tried in order;
/// once a key's responses run out the last one repeats.
pub struct ScriptedBackend {
    rules: Vec<(Regex, Vec<ScriptedResponse>)>,
    default: Option<String>,
    cursors: Mutex<HashMap<(usize, String), usize>>,
    log: Mutex<Vec<String>>,
}

impl ScriptedBackend {
    pub fn new(playbook: Playbook) -> Result<Self, BackendError> {
        let rules = playbook
            .rules
            .into_iter()
            .map(|r| {
                if r.responses.is_empty() {
                    return Err(BackendError::Playbook(format!("rule {:?} has no responses", r.when)));
                }
                let re = Regex::new(&r.when).map_err(|e| BackendError::Playbook(e.to_string()))?;
                Ok((re, r.responses))
            })
            .collect::<Result<_, _>>()?;
        Ok(ScriptedBackend {
            rules,
            default: playbook.default,
            cursors: Mutex::new(HashMap::new()),
            log: Mutex::new(Vec::new()),
        })
    }

    pub fn from_rules<I, S>(rules: I) -> Result<Self, BackendError>
    where
        I: IntoIterator<Item = (S, Vec<S>)>,
        S: Into<String>,
    {
        Self::new(Playbook {
            rules: rules
                .into_iter()
                .map(|(w, rs)| PlaybookRule {
                    when: w.into(),
                    responses: rs.into_iter().map(|r| ScriptedResponse::Text(r.into())).collect(),
                })
                .collect(),
            default: None,
        })
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        Self::new(Playbook::load(path)?)
    }

    /// Every prompt seen so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl GenerationBackend for ScriptedBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        self.log.lock().unwrap().push(req.prompt.clone());
        for (i, (re, responses)) in self.rules.iter().enumerate() {
            let Some(m) = re.find(&req.prompt) else { continue };
            let pos = {
                let mut cursors = self.cursors.lock().unwrap();
                let c = cursors.entry((i, m.as_str().to_string())).or_insert(0);
                let pos = (*c).min(responses.len() - 1);
                *c += 1;
                pos
            };
            return match &responses[pos] {
                ScriptedResponse::Text(t) => Ok(t.clone()),
                ScriptedResponse::Detailed { text, error, delay_ms } => {
                    if *delay_ms > 0 {
                        req.clock.sleep(Duration::from_millis(*delay_ms));
                    }
                    match (text, error) {
                        (_, Some(e)) if e == "timeout" => Err(BackendError::Timeout),
                        (_, Some(e)) => Err(BackendError::Remote(e.clone())),
                        (Some(t), None) => Ok(t.clone()),
                        (None, None) => Ok(String::new()),
                    }
                }
            };
        }
        self.default.clone().ok_or(BackendError::NoMatch)
    }
}

/// JSON-over-HTTP backend. The credential is read from the environment by the caller.
pub struct HttpBackend {
    endpoint: String,
    api_key: Option<String>,
    seed: Option<u64>,
    agent: ureq::Agent,
}

#[derive(Deserialize)]
struct HttpReply {
    text: Option<String>,
    error: Option<String>,
}

impl HttpBackend {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>) -> Self {
        HttpBackend { endpoint: endpoint.into(), api_key, seed: None, agent: ureq::Agent::new_with_defaults() }
    }

    /// Sent with every request for backends that support seeded sampling.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    /// `BACKEND_{ROLE}_URL` and `BACKEND_{ROLE}_KEY`.
    pub fn from_env(role: &str) -> Option<Self> {
        let role = role.to_uppercase();
        let url = std::env::var(format!("BACKEND_{role}_URL")).ok()?;
        Some(Self::new(url, std::env::var(format!("BACKEND_{role}_KEY")).ok()))
    }
}

impl GenerationBackend for HttpBackend {
    fn generate(&self, req: &GenerationRequest) -> Result<String, BackendError> {
        let mut call = self
            .agent
            .post(&self.endpoint)
            .config()
            .timeout_global(Some(Duration::from_secs(req.timeout_s)))
            .build();
        if let Some(k) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {k}"));
        }
        let mut body = serde_json::to_value(req).map_err(|e| BackendError::Transport(e.to_string()))?;
        if let (Some(seed), Some(obj)) = (self.seed, body.as_object_mut()) {
            obj.insert("seed".into(), seed.into());
        }
        let reply: HttpReply = call
            .send_json(&body)
            .map_err(|e| match e {
                ureq::Error::Timeout(_) => BackendError::Timeout,
                other => BackendError::Transport(other.to_string()),
            })?
            .body_mut()
            .read_json()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        match (reply.text, reply.error) {
            (_, Some(e)) => Err(BackendError::Remote(e)),
            (Some(t), None) => Ok(t),
            (None, None) => Err(BackendError::Remote("empty reply".into())),
        }
    }
}
