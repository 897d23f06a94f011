//! Persistent skill banks: `SKILL.md` documents with a flat frontmatter
//! block, stored one directory per skill, appended monotonically and indexed
//! for hybrid (BM25 + embedding) retrieval.

mod bank;
pub mod bm25;
pub mod embed;
mod resolve;
pub mod rrf;
mod synth;
pub mod syntax;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bank::{BankSnapshot, RetrievalConfig, SkillBank, SkillId};
pub use resolve::{resolve_skill, CrossScorer, Resolution, ResolveStage, SkillResolver};
pub use synth::{compatibility_problem, create_skill, evolve_skill, repair_skill, SynthesisOptions};

use crate::backend::BackendError;

#[derive(Debug, Error)]
pub enum SkillError {
    #[error("{name}: version {got} does not follow latest {latest}")]
    VersionConflict { name: String, latest: u32, got: u32 },
    #[error("syntax check failed: {0}")]
    SyntaxInvalid(String),
    #[error("skill synthesis failed: {0}")]
    SynthesisFailed(String),
    #[error("repair of {0} failed; original kept")]
    RepairFailed(String),
    #[error("new version of {name} breaks compatibility: {reason}")]
    CompatibilityBroken { name: String, reason: String },
    #[error("no skill resolves {0:?}")]
    NotResolvable(String),
    #[error("unknown skill {0:?}")]
    UnknownSkill(String),
    #[error("skill bank is frozen")]
    Frozen,
    #[error("skill bank is read-only")]
    ReadOnly,
    #[error("invalid skill name {0:?}")]
    InvalidName(String),
    #[error("lock wait exceeded")]
    LockTimeout,
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SkillKind {
    Function,
    Knowledge,
}

impl fmt::Display for SkillKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SkillKind::Function => "function",
            SkillKind::Knowledge => "knowledge",
        })
    }
}

impl FromStr for SkillKind {
    type Err = SkillError;
    fn from_str(s: &str) -> Result<Self, SkillError> {
        match s.trim() {
            "function" => Ok(SkillKind::Function),
            "knowledge" => Ok(SkillKind::Knowledge),
            other => Err(SkillError::SyntaxInvalid(format!("unknown skill kind {other:?}"))),
        }
    }
}

/// One named argument in a function skill's manifest (`args: query, limit?`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArgSpec {
    pub name: String,
    pub required: bool,
}

pub fn parse_manifest(s: &str) -> Vec<ArgSpec> {
    s.split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(|a| match a.strip_suffix('?') {
            Some(n) => ArgSpec { name: n.trim().to_string(), required: false },
            None => ArgSpec { name: a.to_string(), required: true },
        })
        .collect()
}

pub fn render_manifest(args: &[ArgSpec]) -> String {
    args.iter()
        .map(|a| if a.required { a.name.clone() } else { format!("{}?", a.name) })
        .collect::<Vec<_>>()
        .join(", ")
}

static NAME_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[a-z0-9]+(-[a-z0-9]+)*$").unwrap());

pub fn is_kebab_case(name: &str) -> bool {
    NAME_RE.is_match(name)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skill {
    pub name: String,
    pub kind: SkillKind,
    pub description: String,
    pub version: u32,
    pub created_by: String,
    /// Script text for function skills, Markdown for knowledge skills.
    pub body: String,
    /// Frontmatter keys beyond the fixed ones (`entry`, `args`, ...).
    pub extra: BTreeMap<String, String>,
}

const FIXED_KEYS: [&str; 5] = ["name", "kind", "description", "version", "created_by"];

impl Skill {
    pub fn knowledge(name: impl Into<String>, description: impl Into<String>, body: impl Into<String>) -> Self {
        Skill {
            name: name.into(),
            kind: SkillKind::Knowledge,
            description: description.into(),
            version: 1,
            created_by: "manual".into(),
            body: body.into(),
            extra: BTreeMap::new(),
        }
    }

    pub fn function(
        name: impl Into<String>,
        description: impl Into<String>,
        entry: impl Into<String>,
        args: &[ArgSpec],
        body: impl Into<String>,
    ) -> Self {
        let mut extra = BTreeMap::new();
        extra.insert("entry".to_string(), entry.into());
        extra.insert("args".to_string(), render_manifest(args));
        Skill { kind: SkillKind::Function, extra, ..Skill::knowledge(name, description, body) }
    }

    pub fn with_version(mut self, v: u32) -> Self {
        self.version = v;
        self
    }

    pub fn created_by(mut self, who: impl Into<String>) -> Self {
        self.created_by = who.into();
        self
    }

    pub fn entry(&self) -> Option<&str> {
        self.extra.get("entry").map(String::as_str)
    }

    pub fn manifest(&self) -> Vec<ArgSpec> {
        self.extra.get("args").map(|a| parse_manifest(a)).unwrap_or_default()
    }

    /// Text indexed for retrieval.
    pub fn search_text(&self) -> String {
        format!("{} {}\n{}", self.name.replace('-', " "), self.description, self.body)
    }

    pub fn render(&self) -> String {
        let mut out = String::from("---\n");
        out.push_str(&format!("name: {}\n", self.name));
        out.push_str(&format!("kind: {}\n", self.kind));
        out.push_str(&format!("description: {}\n", self.description));
        out.push_str(&format!("version: {}\n", self.version));
        out.push_str(&format!("created_by: {}\n", self.created_by));
        for (k, v) in &self.extra {
            out.push_str(&format!("{k}: {v}\n"));
        }
        out.push_str("---\n");
        out.push_str(&self.body);
        out
    }

    /// Parses a `SKILL.md` document. Requires name, kind, description and version.
    pub fn parse(doc: &str) -> Result<Self, SkillError> {
        let bad = |m: String| SkillError::SyntaxInvalid(m);
        let rest = doc
            .strip_prefix("---\n")
            .or_else(|| doc.strip_prefix("---\r\n"))
            .ok_or_else(|| bad("missing frontmatter".into()))?;
        let mut fields = BTreeMap::new();
        let mut rest = rest;
        loop {
            let (line, tail) = match rest.find('\n') {
                Some(i) => (&rest[..i], &rest[i + 1..]),
                None => (rest, ""),
            };
            let line = line.trim_end_matches('\r');
            if line == "---" {
                rest = tail;
                break;
            }
            if tail.is_empty() && !rest.contains('\n') {
                return Err(bad("unterminated frontmatter".into()));
            }
            if !line.trim().is_empty() {
                let (k, v) = line.split_once(':').ok_or_else(|| bad(format!("bad frontmatter line {line:?}")))?;
                fields.insert(k.trim().to_string(), v.trim().trim_matches('"').to_string());
            }
            rest = tail;
        }
        let mut take = |k: &str| fields.remove(k).filter(|v| !v.is_empty());
        let name = take("name").ok_or_else(|| bad("frontmatter lacks name".into()))?;
        let kind: SkillKind = take("kind").ok_or_else(|| bad("frontmatter lacks kind".into()))?.parse()?;
        let description = take("description").ok_or_else(|| bad("frontmatter lacks description".into()))?;
        let version = take("version")
            .ok_or_else(|| bad("frontmatter lacks version".into()))?
            .parse::<u32>()
            .map_err(|e| bad(format!("bad version: {e}")))?;
        let created_by = take("created_by").unwrap_or_else(|| "unknown".into());
        fields.retain(|k, _| !FIXED_KEYS.contains(&k.as_str()));
        Ok(Skill { name, kind, description, version, created_by, body: rest.to_string(), extra: fields })
    }

    /// Structural checks that do not need an interpreter.
    pub fn check_shape(&self) -> Result<(), SkillError> {
        if !is_kebab_case(&self.name) {
            return Err(SkillError::InvalidName(self.name.clone()));
        }
        if self.version == 0 {
            return Err(SkillError::SyntaxInvalid("version must be >= 1".into()));
        }
        if self.description.trim().is_empty() || self.description.contains('\n') {
            return Err(SkillError::SyntaxInvalid("description must be one non-empty line".into()));
        }
        for (k, v) in &self.extra {
            if v.contains('\n') || k.contains(':') || k.contains('\n') {
                return Err(SkillError::SyntaxInvalid(format!("bad frontmatter entry {k:?}")));
            }
        }
        if self.kind == SkillKind::Function && self.entry().is_none_or(|e| e.trim().is_empty()) {
            return Err(SkillError::SyntaxInvalid("function skill declares no entry command".into()));
        }
        Ok(())
    }
}

/// Strips a surrounding Markdown code fence, if any.
pub(crate) fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let rest = rest.split_once('\n').map_or("", |(_, r)| r);
        if let Some(inner) = rest.trim_end().strip_suffix("```") {
            return inner;
        }
    }
    text
}
