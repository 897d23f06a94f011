//! Directory-backed skill bank with monotone appends and a hybrid index.
//!
//! Layout: `{root}/{name}/SKILL.md` holds the latest version and
//! `{root}/{name}/SKILL.v{n}.md` every earlier one. Appends serialise on
//! `{root}/.bank.lock`; each append bumps `{root}/.generation` so other
//! handles on the same directory notice and reload their index.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::bm25::{Bm25Index, Bm25Params};
use super::embed::{cosine, EmbeddingProvider, TrigramEmbedder};
use super::rrf::DEFAULT_RRF_K;
use super::syntax::SyntaxChecker;
use super::{Skill, SkillError, SkillKind};
use crate::lock::{atomic_write, lock_exclusive, LockError, DEFAULT_LOCK_TIMEOUT};
use crate::sha256_hex;

const LOCK_FILE: &str = ".bank.lock";
const GENERATION_FILE: &str = ".generation";
const FROZEN_FILE: &str = ".frozen";
const LATEST_FILE: &str = "SKILL.md";

/// Retrieval knobs (`bm25.k1`, `bm25.b`, `rrf.k`, `resolve.threshold`, `resolve.top_n`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub bm25: Bm25Params,
    pub rrf_k: f64,
    /// Minimum fused top-1 score for a stage-2 hit.
    pub threshold: f64,
    pub top_n: usize,
    /// Cosine floor below which a skill is not a vector candidate at all.
    pub min_similarity: f64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig { bm25: Bm25Params::default(), rrf_k: DEFAULT_RRF_K, threshold: 0.016, top_n: 5, min_similarity: 0.1 }
    }
}

/// One committed file: (name, version, sha256 of its bytes).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SkillId {
    pub name: String,
    pub version: u32,
    pub sha256: String,
}

/// Every committed (name, version, hash) triple in a bank.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BankSnapshot {
    pub entries: BTreeSet<SkillId>,
}

impl BankSnapshot {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_subset_of(&self, later: &BankSnapshot) -> bool {
        self.entries.is_subset(&later.entries)
    }

    /// Entries in `later` that are not in `self`.
    pub fn added_in(&self, later: &BankSnapshot) -> Vec<SkillId> {
        later.entries.difference(&self.entries).cloned().collect()
    }

    pub fn hash(&self) -> String {
        let mut text = String::new();
        for e in &self.entries {
            text.push_str(&format!("{}\t{}\t{}\n", e.name, e.version, e.sha256));
        }
        sha256_hex(text.as_bytes())
    }
}

#[derive(Default)]
struct Index {
    generation: Option<String>,
    latest: BTreeMap<String, Skill>,
    versions: BTreeMap<String, Vec<u32>>,
    bm25: Bm25Index,
    vectors: BTreeMap<String, Vec<f64>>,
}

pub struct SkillBank {
    root: PathBuf,
    read_only: bool,
    checker: SyntaxChecker,
    embedder: Arc<dyn EmbeddingProvider>,
    config: RetrievalConfig,
    lock_timeout: Duration,
    index: RwLock<Index>,
}

impl std::fmt::Debug for SkillBank {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SkillBank").field("root", &self.root).field("read_only", &self.read_only).finish()
    }
}

impl SkillBank {
    /// Opens (creating if needed) a writable bank.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, SkillError> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Self::build(root, false)
    }

    /// Opens an existing directory as a read-only tier.
    pub fn open_read_only(root: impl Into<PathBuf>) -> Result<Self, SkillError> {
        Self::build(root.into(), true)
    }

    fn build(root: PathBuf, read_only: bool) -> Result<Self, SkillError> {
        let bank = SkillBank {
            root,
            read_only,
            checker: SyntaxChecker::default(),
            embedder: Arc::new(TrigramEmbedder::default()),
            config: RetrievalConfig::default(),
            lock_timeout: DEFAULT_LOCK_TIMEOUT,
            index: RwLock::new(Index::default()),
        };
        bank.reload()?;
        Ok(bank)
    }

    pub fn with_checker(mut self, checker: SyntaxChecker) -> Self {
        self.checker = checker;
        self
    }

    pub fn with_embedder(self, embedder: Arc<dyn EmbeddingProvider>) -> Result<Self, SkillError> {
        let bank = SkillBank { embedder, ..self };
        bank.reload()?;
        Ok(bank)
    }

    pub fn with_config(self, config: RetrievalConfig) -> Result<Self, SkillError> {
        let bank = SkillBank { config, ..self };
        bank.reload()?;
        Ok(bank)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.config
    }

    pub fn checker(&self) -> &SyntaxChecker {
        &self.checker
    }

    pub fn is_read_only(&self) -> bool {
        self.read_only
    }

    pub fn is_frozen(&self) -> bool {
        self.root.join(FROZEN_FILE).exists()
    }

    /// Blocks further appends. Irreversible through this API.
    pub fn freeze(&self) -> Result<(), SkillError> {
        if self.read_only {
            return Err(SkillError::ReadOnly);
        }
        fs::write(self.root.join(FROZEN_FILE), b"")?;
        Ok(())
    }

    fn current_generation(&self) -> Option<String> {
        fs::read_to_string(self.root.join(GENERATION_FILE)).ok()
    }

    /// Rebuilds the index from disk.
    pub fn reload(&self) -> Result<(), SkillError> {
        let generation = self.current_generation();
        let mut fresh = Index { generation, bm25: Bm25Index::new(self.config.bm25), ..Index::default() };
        if self.root.is_dir() {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&self.root)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            dirs.sort();
            for dir in dirs {
                let latest = dir.join(LATEST_FILE);
                if !latest.exists() {
                    continue;
                }
                let skill = Skill::parse(&fs::read_to_string(&latest)?)?;
                let mut versions: Vec<u32> = list_files(&dir)?.into_iter().map(|(v, _)| v).collect();
                versions.push(skill.version);
                versions.sort_unstable();
                versions.dedup();
                let text = skill.search_text();
                fresh.bm25.upsert(&skill.name, &text);
                fresh.vectors.insert(skill.name.clone(), self.embed(&text));
                fresh.versions.insert(skill.name.clone(), versions);
                fresh.latest.insert(skill.name.clone(), skill);
            }
        }
        *self.index.write().unwrap() = fresh;
        Ok(())
    }

    fn embed(&self, text: &str) -> Vec<f64> {
        // A failing hosted provider must not take retrieval down; the
        // deterministic fallback keeps the vector list meaningful.
        self.embedder.embed(text).unwrap_or_else(|e| {
            log::warn!("embedding provider failed ({e}); using trigram fallback");
            TrigramEmbedder::new(self.embedder.dimension()).embed(text).expect("trigram embedding")
        })
    }

    /// Reloads if another handle committed since the last load.
    pub fn refresh(&self) -> Result<(), SkillError> {
        let on_disk = self.current_generation();
        if self.index.read().unwrap().generation != on_disk {
            self.reload()?;
        }
        Ok(())
    }

    /// Shape and syntax checks applied before any registration.
    pub fn validate(&self, skill: &Skill) -> Result<(), SkillError> {
        skill.check_shape()?;
        if skill.kind == SkillKind::Function {
            self.checker.check(&skill.body).map_err(SkillError::SyntaxInvalid)?;
        }
        Ok(())
    }

    /// Commits `skill`. Its version must be 1 for a new name, latest + 1 otherwise.
    pub fn append(&self, skill: Skill) -> Result<Skill, SkillError> {
        if self.read_only {
            return Err(SkillError::ReadOnly);
        }
        if self.is_frozen() {
            return Err(SkillError::Frozen);
        }
        self.validate(&skill)?;
        let _guard = lock_exclusive(&self.root.join(LOCK_FILE), self.lock_timeout).map_err(|e| match e {
            LockError::Timeout(..) => SkillError::LockTimeout,
            LockError::Io(e) => SkillError::Io(e),
        })?;
        if self.is_frozen() {
            return Err(SkillError::Frozen);
        }
        self.refresh()?;
        let latest = self.latest_version(&skill.name).unwrap_or(0);
        if skill.version != latest + 1 {
            return Err(SkillError::VersionConflict { name: skill.name.clone(), latest, got: skill.version });
        }
        let dir = self.root.join(&skill.name);
        fs::create_dir_all(&dir)?;
        let current = dir.join(LATEST_FILE);
        if latest > 0 {
            // Keep the prior bytes under their versioned name before replacing SKILL.md.
            let prior = fs::read(&current)?;
            atomic_write(&dir.join(format!("SKILL.v{latest}.md")), &prior)?;
        }
        atomic_write(&current, skill.render().as_bytes())?;
        let next = self.current_generation().and_then(|g| g.trim().parse::<u64>().ok()).unwrap_or(0) + 1;
        atomic_write(&self.root.join(GENERATION_FILE), next.to_string().as_bytes())?;
        self.reload()?;
        log::debug!("appended {} v{}", skill.name, skill.version);
        Ok(skill)
    }

    pub fn latest_version(&self, name: &str) -> Option<u32> {
        self.index.read().unwrap().latest.get(name).map(|s| s.version)
    }

    /// Latest version of `name`.
    pub fn get(&self, name: &str) -> Option<Skill> {
        self.index.read().unwrap().latest.get(name).cloned()
    }

    /// Case-folded exact name lookup.
    pub fn find_exact(&self, query: &str) -> Option<Skill> {
        let key = query.trim().to_lowercase();
        let idx = self.index.read().unwrap();
        idx.latest.values().find(|s| s.name.to_lowercase() == key).cloned()
    }

    pub fn get_version(&self, name: &str, version: u32) -> Result<Skill, SkillError> {
        let dir = self.root.join(name);
        let latest = dir.join(LATEST_FILE);
        let path = if self.latest_version(name) == Some(version) {
            latest
        } else {
            dir.join(format!("SKILL.v{version}.md"))
        };
        let text = fs::read_to_string(&path).map_err(|_| SkillError::UnknownSkill(format!("{name}@v{version}")))?;
        Skill::parse(&text)
    }

    pub fn versions(&self, name: &str) -> Vec<u32> {
        self.index.read().unwrap().versions.get(name).cloned().unwrap_or_default()
    }

    /// Latest version of every skill, by name.
    pub fn list(&self) -> Vec<Skill> {
        self.index.read().unwrap().latest.values().cloned().collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.index.read().unwrap().latest.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.index.read().unwrap().latest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// BM25 ranking, best first, positive scores only.
    pub fn search_bm25(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        self.index.read().unwrap().bm25.search(query, top_n)
    }

    /// Cosine ranking above `min_similarity`, best first, ties by name.
    pub fn search_vector(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        let q = self.embed(query);
        let idx = self.index.read().unwrap();
        let mut hits: Vec<(String, f64)> = idx
            .vectors
            .iter()
            .map(|(n, v)| (n.clone(), cosine(&q, v)))
            .filter(|(_, s)| *s >= self.config.min_similarity)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(top_n);
        hits
    }

    /// Hashes every committed file on disk.
    pub fn snapshot(&self) -> Result<BankSnapshot, SkillError> {
        let mut snap = BankSnapshot::default();
        if !self.root.is_dir() {
            return Ok(snap);
        }
        for entry in fs::read_dir(&self.root)? {
            let dir = entry?.path();
            if !dir.is_dir() {
                continue;
            }
            let name = dir.file_name().unwrap_or_default().to_string_lossy().into_owned();
            let mut files = list_files(&dir)?;
            let latest = dir.join(LATEST_FILE);
            if latest.exists() {
                let text = fs::read_to_string(&latest)?;
                files.push((Skill::parse(&text)?.version, latest));
            }
            for (version, path) in files {
                let bytes = fs::read(&path)?;
                snap.entries.insert(SkillId { name: name.clone(), version, sha256: sha256_hex(&bytes) });
            }
        }
        Ok(snap)
    }

    pub fn bank_hash(&self) -> Result<String, SkillError> {
        Ok(self.snapshot()?.hash())
    }
}

/// `SKILL.v{n}.md` files in `dir`.
fn list_files(dir: &Path) -> Result<Vec<(u32, PathBuf)>, SkillError> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir)? {
        let path = e?.path();
        let fname = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(v) = fname.strip_prefix("SKILL.v").and_then(|r| r.strip_suffix(".md")).and_then(|v| v.parse().ok()) {
            out.push((v, path));
        }
    }
    out.sort();
    Ok(out)
}
