//! Three-stage skill resolution: exact name, hybrid retrieval, synthesis.

use std::sync::Arc;

use serde::Serialize;

use super::bank::SkillBank;
use super::rrf::rrf_fuse;
use super::synth::{create_skill, SynthesisOptions};
use super::{Skill, SkillError};
use crate::backend::GenerationBackend;

/// Optional second-pass scorer over fused candidates (higher is better).
pub trait CrossScorer: Send + Sync {
    fn score(&self, query: &str, skill: &Skill) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolveStage {
    Exact,
    Retrieved,
    Created,
}

#[derive(Debug, Clone, Serialize)]
pub struct Resolution {
    pub skill: Skill,
    pub stage: ResolveStage,
    /// Fused score for retrieved skills.
    pub score: Option<f64>,
    pub from_remote: bool,
}

/// Local bank plus an optional read-only remote tier and creator.
#[derive(Clone)]
pub struct SkillResolver {
    pub local: Arc<SkillBank>,
    pub remote: Option<Arc<SkillBank>>,
    pub creator: Option<Arc<dyn GenerationBackend>>,
    pub reranker: Option<Arc<dyn CrossScorer>>,
    pub synthesis: SynthesisOptions,
}

impl SkillResolver {
    pub fn new(local: Arc<SkillBank>) -> Self {
        SkillResolver { local, remote: None, creator: None, reranker: None, synthesis: SynthesisOptions::default() }
    }

    pub fn with_remote(mut self, remote: Arc<SkillBank>) -> Self {
        self.remote = Some(remote);
        self
    }

    pub fn with_creator(mut self, creator: Arc<dyn GenerationBackend>) -> Self {
        self.creator = Some(creator);
        self
    }

    pub fn with_reranker(mut self, reranker: Arc<dyn CrossScorer>) -> Self {
        self.reranker = Some(reranker);
        self
    }

    fn tiers(&self) -> Vec<(&SkillBank, bool)> {
        let mut t = vec![(self.local.as_ref(), false)];
        if let Some(r) = &self.remote {
            t.push((r.as_ref(), true));
        }
        t
    }

    fn lookup(&self, name: &str) -> Option<(Skill, bool)> {
        self.tiers().into_iter().find_map(|(b, remote)| b.get(name).map(|s| (s, remote)))
    }

    /// Stage 1 and 2 only; never writes.
    pub fn find(&self, query: &str) -> Result<Option<Resolution>, SkillError> {
        for (bank, _) in self.tiers() {
            bank.refresh()?;
        }
        for (bank, remote) in self.tiers() {
            if let Some(skill) = bank.find_exact(query) {
                return Ok(Some(Resolution { skill, stage: ResolveStage::Exact, score: None, from_remote: remote }));
            }
        }
        let cfg = *self.local.config();
        let mut lists: Vec<Vec<String>> = Vec::new();
        for (bank, _) in self.tiers() {
            lists.push(bank.search_bm25(query, cfg.top_n).into_iter().map(|(n, _)| n).collect());
            lists.push(bank.search_vector(query, cfg.top_n).into_iter().map(|(n, _)| n).collect());
        }
        let fused = rrf_fuse(&lists, cfg.rrf_k);
        let Some(top) = fused.first().map(|(_, s)| *s) else {
            return Ok(None);
        };
        if top < cfg.threshold {
            return Ok(None);
        }
        let mut candidates: Vec<(String, f64)> = fused.into_iter().filter(|(_, s)| *s >= cfg.threshold).collect();
        candidates.truncate(cfg.top_n.max(1));
        let (name, score) = match &self.reranker {
            None => candidates.swap_remove(0),
            Some(r) => {
                let mut best: Option<(String, f64, f64)> = None;
                for (n, s) in candidates {
                    let Some((skill, _)) = self.lookup(&n) else { continue };
                    let cross = r.score(query, &skill);
                    if best.as_ref().is_none_or(|b| cross > b.2) {
                        best = Some((n, s, cross));
                    }
                }
                match best {
                    Some((n, s, _)) => (n, s),
                    None => return Ok(None),
                }
            }
        };
        Ok(self.lookup(&name).map(|(skill, remote)| Resolution {
            skill,
            stage: ResolveStage::Retrieved,
            score: Some(score),
            from_remote: remote,
        }))
    }

    /// Full resolution; stage 3 synthesises into the local bank.
    pub fn resolve(&self, query: &str) -> Result<Resolution, SkillError> {
        if let Some(r) = self.find(query)? {
            return Ok(r);
        }
        match &self.creator {
            Some(creator) => {
                let skill = create_skill(&self.local, query, self.synthesis.default_kind, creator, &self.synthesis)?;
                Ok(Resolution { skill, stage: ResolveStage::Created, score: None, from_remote: false })
            }
            None => Err(SkillError::NotResolvable(query.to_string())),
        }
    }
}

/// One-shot resolution against a single bank.
pub fn resolve_skill(
    bank: &Arc<SkillBank>,
    query: &str,
    creator: Option<Arc<dyn GenerationBackend>>,
) -> Result<Resolution, SkillError> {
    let mut r = SkillResolver::new(bank.clone());
    r.creator = creator;
    r.resolve(query)
}
