//! `RunConfig`: one TOML file, every key overridable by flags.
//!
//! Credentials never live in the file. Backend keys come from
//! `BACKEND_{ROLE}_KEY` and the search key from `SEARCH_API_KEY`; a file that
//! carries anything credential-shaped is rejected at load.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use webtable_core::agents::{OrchestratorConfig, WorkerConfig};
use webtable_core::backend::{GenerationBackend, HttpBackend, ScriptedBackend};
use webtable_core::clock::Clock;
use webtable_core::scoring::ComparatorConfig;
use webtable_core::tools::{FixtureEnv, LiveEnv, MissPolicy, RecordingEnv, WebEnvironment};

use crate::error::CliError;

pub const ROLES: [&str; 5] = ["orchestrator", "worker", "digest", "reflect", "judge"];

const CREDENTIAL_WORDS: [&str; 7] = ["key", "apikey", "token", "secret", "password", "credential", "credentials"];

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum EnvMode {
    #[default]
    Fixture,
    Live,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub mode: EnvMode,
    /// Fixture directory; required in fixture mode.
    pub corpus: Option<PathBuf>,
    pub miss_policy: MissPolicy,
    /// Live request timeout.
    pub timeout_s: f64,
    /// Minimum gap between live requests.
    pub politeness_ms: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig { mode: EnvMode::Fixture, corpus: None, miss_policy: MissPolicy::Error, timeout_s: 30.0, politeness_ms: 500 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendConfig {
    /// Replays a playbook file.
    Scripted { playbook: PathBuf },
    /// JSON over HTTP; the URL may also come from `BACKEND_{ROLE}_URL`.
    Http {
        #[serde(default)]
        url: Option<String>,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Backends {
    pub orchestrator: Option<BackendConfig>,
    pub worker: Option<BackendConfig>,
    pub digest: Option<BackendConfig>,
    pub reflect: Option<BackendConfig>,
    pub judge: Option<BackendConfig>,
}

impl Backends {
    pub fn get(&self, role: &str) -> Option<&BackendConfig> {
        match role {
            "orchestrator" => self.orchestrator.as_ref(),
            "worker" => self.worker.as_ref(),
            "digest" => self.digest.as_ref(),
            "reflect" => self.reflect.as_ref(),
            "judge" => self.judge.as_ref(),
            _ => None,
        }
    }

    fn slots_mut(&mut self) -> [&mut Option<BackendConfig>; 5] {
        [&mut self.orchestrator, &mut self.worker, &mut self.digest, &mut self.reflect, &mut self.judge]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub low_accuracy_threshold: f64,
    pub reflect_attempts: u32,
    pub freeze: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            low_accuracy_threshold: webtable_core::evolution::DEFAULT_LOW_ACCURACY_THRESHOLD,
            reflect_attempts: 3,
            freeze: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SkillsConfig {
    /// Infer refuses banks that have not been frozen by training.
    pub require_frozen: bool,
    /// Let workers create and repair skills at run time through their backend.
    pub runtime_synthesis: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Holds `strategies/` and `workers/`.
    pub banks: PathBuf,
    pub seed: u64,
    pub env: EnvConfig,
    pub backends: Backends,
    pub orchestrator: OrchestratorConfig,
    pub worker: WorkerConfig,
    pub training: TrainingConfig,
    pub skills: SkillsConfig,
    pub comparator: ComparatorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            banks: PathBuf::from("banks"),
            seed: 0,
            env: EnvConfig::default(),
            backends: Backends::default(),
            orchestrator: OrchestratorConfig::default(),
            worker: WorkerConfig::default(),
            training: TrainingConfig::default(),
            skills: SkillsConfig::default(),
            comparator: ComparatorConfig::default(),
        }
    }
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Directory holding the strategies/ and workers/ banks.
    #[arg(long, global = true)]
    pub banks: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<EnvMode>,
    /// Fixture corpus directory.
    #[arg(long, global = true)]
    pub corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    pub miss_policy: Option<MissPolicy>,
    /// Scripted playbook for the orchestrator and worker roles.
    #[arg(long, global = true)]
    pub backend_playbook: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker pool ceiling.
    #[arg(long, global = true)]
    pub max_workers: Option<usize>,
    /// Per-worker step bound.
    #[arg(long, global = true)]
    pub max_steps: Option<u32>,
    /// Per-tool-call timeout in seconds.
    #[arg(long, global = true)]
    pub tool_timeout: Option<f64>,
}

fn credential_key(key: &str) -> bool {
    let k = key.to_lowercase().replace('-', "_");
    CREDENTIAL_WORDS.iter().any(|w| k == *w || k.ends_with(&format!("_{w}")))
}

/// Finds the first credential-shaped key, or a URL with user info.
fn find_credential(value: &toml::Value, path: &str) -> Option<String> {
    match value {
        toml::Value::Table(t) => t.iter().find_map(|(k, v)| {
            let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
            if credential_key(k) {
                Some(here)
            } else {
                find_credential(v, &here)
            }
        }),
        toml::Value::Array(items) => items.iter().find_map(|v| find_credential(v, path)),
        toml::Value::String(s) => {
            let after_scheme = s.split_once("://").map(|(_, rest)| rest)?;
            let authority = after_scheme.split('/').next().unwrap_or("");
            authority.contains('@').then(|| path.to_string())
        }
        _ => None,
    }
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        if let Some(key) = find_credential(&raw, "") {
            return Err(CliError::Config(format!(
                "{key}: credentials are read from BACKEND_{{ROLE}}_KEY and SEARCH_API_KEY only, never from the config file"
            )));
        }
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.banks = resolve(base, &cfg.banks);
        if let Some(c) = &cfg.env.corpus {
            cfg.env.corpus = Some(resolve(base, c));
        }
        for slot in cfg.backends.slots_mut() {
            if let Some(BackendConfig::Scripted { playbook }) = slot {
                *playbook = resolve(base, playbook);
            }
        }
        Ok(cfg)
    }

    /// Reads the file named by `--config` (if any) and applies the flags.
    pub fn load(o: &Overrides) -> Result<Self, CliError> {
        let mut cfg = match &o.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
                let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
                Self::parse(&text, &base)?
            }
            None => RunConfig::default(),
        };
        if let Some(b) = &o.banks {
            cfg.banks = b.clone();
        }
        if let Some(m) = o.mode {
            cfg.env.mode = m;
        }
        if let Some(c) = &o.corpus {
            cfg.env.corpus = Some(c.clone());
        }
        if let Some(m) = o.miss_policy {
            cfg.env.miss_policy = m;
        }
        if let Some(p) = &o.backend_playbook {
            let scripted = BackendConfig::Scripted { playbook: p.clone() };
            cfg.backends.orchestrator = Some(scripted.clone());
            cfg.backends.worker = Some(scripted);
        }
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(n) = o.max_workers {
            cfg.orchestrator.max_workers = n;
        }
        if let Some(n) = o.max_steps {
            cfg.worker.max_steps = n;
        }
        if let Some(t) = o.tool_timeout {
            if !(t.is_finite() && t > 0.0) {
                return Err(CliError::Config(format!("tool timeout must be positive, got {t}")));
            }
            cfg.worker.tool_timeout = Duration::from_secs_f64(t);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks values and that every referenced path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.orchestrator.validate().map_err(CliError::Config)?;
        self.worker.validate().map_err(CliError::Config)?;
        if self.env.mode == EnvMode::Fixture {
            match &self.env.corpus {
                None => return Err(CliError::Config("fixture mode needs a corpus directory".into())),
                Some(c) if !c.is_dir() => {
                    return Err(CliError::Config(format!("corpus {} does not exist", c.display())))
                }
                _ => {}
            }
        }
        for role in ROLES {
            match self.backends.get(role) {
                Some(BackendConfig::Scripted { playbook }) if !playbook.is_file() => {
                    return Err(CliError::Config(format!("{role} playbook {} does not exist", playbook.display())));
                }
                Some(BackendConfig::Http { url }) if url.is_none() && env_url(role).is_none() => {
                    return Err(CliError::Config(format!(
                        "{role} backend has no url; set it in the file or BACKEND_{}_URL",
                        role.to_uppercase()
                    )));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Fixture runs with only scripted backends are timed on a fake clock, so
    /// reruns are byte-identical. Anything touching the network uses wall time.
    pub fn clock(&self) -> Clock {
        let scripted = ROLES.iter().all(|r| !matches!(self.backends.get(r), Some(BackendConfig::Http { .. })));
        if self.env.mode == EnvMode::Fixture && scripted {
            Clock::fake()
        } else {
            Clock::System
        }
    }

    pub fn strategies_dir(&self) -> PathBuf {
        self.banks.join("strategies")
    }

    pub fn workers_dir(&self) -> PathBuf {
        self.banks.join("workers")
    }

    /// The web environment. Live traffic is recorded under `record_dir`.
    pub fn environment(&self, record_dir: &Path) -> Result<Arc<dyn WebEnvironment>, CliError> {
        match self.env.mode {
            EnvMode::Fixture => {
                let corpus = self.env.corpus.as_ref().expect("validated");
                let env = FixtureEnv::load(corpus, self.env.miss_policy).map_err(|e| CliError::Config(e.to_string()))?;
                Ok(Arc::new(env))
            }
            EnvMode::Live => {
                let live = LiveEnv::from_env(
                    Duration::from_secs_f64(self.env.timeout_s),
                    Duration::from_millis(self.env.politeness_ms),
                )
                .ok_or_else(|| CliError::Config("live mode needs SEARCH_API_URL".into()))?;
                Ok(Arc::new(RecordingEnv::new(Arc::new(live), record_dir.join("corpus"))))
            }
        }
    }

    /// One backend per configured role. Roles sharing a playbook file share
    /// one scripted instance so its response cursors advance together.
    pub fn backends(&self) -> Result<HashMap<&'static str, Arc<dyn GenerationBackend>>, CliError> {
        let mut scripted: HashMap<PathBuf, Arc<dyn GenerationBackend>> = HashMap::new();
        let mut out = HashMap::new();
        for role in ROLES {
            let backend: Arc<dyn GenerationBackend> = match self.backends.get(role) {
                None => continue,
                Some(BackendConfig::Scripted { playbook }) => {
                    let key = playbook.canonicalize().unwrap_or_else(|_| playbook.clone());
                    if let Some(b) = scripted.get(&key) {
                        b.clone()
                    } else {
                        let b: Arc<dyn GenerationBackend> = Arc::new(
                            ScriptedBackend::load(playbook)
                                .map_err(|e| CliError::Config(format!("{}: {e}", playbook.display())))?,
                        );
                        scripted.insert(key, b.clone());
                        b
                    }
                }
                Some(BackendConfig::Http { url }) => {
                    let upper = role.to_uppercase();
                    let url = url.clone().or_else(|| env_url(role)).expect("validated");
                    let key = std::env::var(format!("BACKEND_{upper}_KEY")).ok();
                    Arc::new(HttpBackend::new(url, key).with_seed(self.seed))
                }
            };
            out.insert(role, backend);
        }
        Ok(out)
    }
}

fn env_url(role: &str) -> Option<String> {
    std::env::var(format!("BACKEND_{}_URL", role.to_uppercase())).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_credentials() {
        for text in [
            "[backends.worker]\nkind = \"http\"\nurl = \"http://x\"\napi_key = \"sk\"\n",
            "token = \"abc\"\n",
            "[backends.judge]\nkind = \"http\"\nurl = \"https://user:pw@host/v1\"\n",
        ] {
            let err = RunConfig::parse(text, Path::new(".")).unwrap_err();
            assert!(matches!(err, CliError::Config(_)), "{text}");
        }
    }

    #[test]
    fn keyword_lookalikes_are_fine() {
        assert!(!credential_key("monkey"));
        assert!(!credential_key("keyword"));
        assert!(credential_key("search_api_key"));
    }

    #[test]
    fn paths_resolve_against_the_file() {
        let cfg = RunConfig::parse(
            "banks = \"b\"\n[env]\ncorpus = \"c\"\n[backends.worker]\nkind = \"scripted\"\nplaybook = \"p.json\"\n",
            Path::new("/cfg"),
        )
        .unwrap();
        assert_eq!(cfg.banks, PathBuf::from("/cfg/b"));
        assert_eq!(cfg.env.corpus, Some(PathBuf::from("/cfg/c")));
        assert_eq!(cfg.backends.worker, Some(BackendConfig::Scripted { playbook: "/cfg/p.json".into() }));
    }

    #[test]
    fn unknown_keys_are_errors() {
        assert!(RunConfig::parse("[worker]\nmax_step = 3\n", Path::new(".")).is_err());
        let cfg = RunConfig::parse("[worker]\nmax_steps = 3\n[orchestrator]\nmax_workers = 4\n", Path::new(".")).unwrap();
        assert_eq!((cfg.worker.max_steps, cfg.orchestrator.max_workers), (3, 4));
    }
}
