//! The sequential run, verify, reflect loop over a training set.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;

use super::consolidate::{consolidate, Consolidation};
use super::reflect::{cluster_queries, reflect, ReflectOptions, ReflectionOutput};
use super::verify::{run_episode, verify, ErrorReport, DEFAULT_LOW_ACCURACY_THRESHOLD};
use super::EvolutionError;
use crate::agents::Orchestrator;
use crate::backend::GenerationBackend;
use crate::query::Query;
use crate::scoring::ComparatorConfig;
use crate::table::Table;

#[derive(Clone)]
pub struct TrainConfig {
    /// Episodes K; defaults to one pass over the dataset. Queries repeat cyclically.
    pub episodes: Option<usize>,
    pub low_accuracy_threshold: f64,
    pub reflect_attempts: u32,
    pub comparator: ComparatorConfig,
    /// Receives `episodes/{k}/` and `metrics.jsonl`.
    pub out_dir: PathBuf,
    /// Mark both banks frozen at the end.
    pub freeze: bool,
    /// Summarises trajectories for the error report; the reflector when unset.
    pub digest_backend: Option<Arc<dyn GenerationBackend>>,
}

impl std::fmt::Debug for TrainConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainConfig")
            .field("episodes", &self.episodes)
            .field("low_accuracy_threshold", &self.low_accuracy_threshold)
            .field("reflect_attempts", &self.reflect_attempts)
            .field("comparator", &self.comparator)
            .field("out_dir", &self.out_dir)
            .field("freeze", &self.freeze)
            .field("digest_backend", &self.digest_backend.is_some())
            .finish()
    }
}

impl TrainConfig {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        TrainConfig {
            episodes: None,
            low_accuracy_threshold: DEFAULT_LOW_ACCURACY_THRESHOLD,
            reflect_attempts: 3,
            comparator: ComparatorConfig::default(),
            out_dir: out_dir.into(),
            freeze: true,
            digest_backend: None,
        }
    }
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, Serialize)]
pub struct EpisodeLog {
    pub episode: usize,
    pub query: String,
    pub cluster: String,
    pub strategy: Option<String>,
    pub utility: f64,
    pub row_f1: f64,
    pub round2: bool,
    pub added: Consolidation,
    /// Prior snapshots are subsets of the new ones.
    pub monotone: bool,
    pub strategy_bank_hash: String,
    pub worker_bank_hash: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub episodes: Vec<EpisodeLog>,
    pub strategy_bank_hash: String,
    pub worker_bank_hash: Option<String>,
}

impl TrainSummary {
    pub fn utilities(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.utility).collect()
    }
}

/// One training query and its gold table, or why the gold could not be read.
#[derive(Debug, Clone)]
pub struct DatasetItem {
    pub query: Query,
    pub gold: Result<Table, String>,
}

/// Runs K episodes in order, growing the orchestrator's strategy bank and,
/// when it has one, its local worker bank. `reflector` serves clustering,
/// digests and reflection; without it the structural templates are used.
pub fn train(
    dataset: &[(Query, Table)],
    orchestrator: &Orchestrator,
    reflector: Option<&Arc<dyn GenerationBackend>>,
    config: &TrainConfig,
) -> Result<TrainSummary, EvolutionError> {
    let items: Vec<DatasetItem> = dataset.iter().map(|(q, g)| DatasetItem { query: q.clone(), gold: Ok(g.clone()) }).collect();
    train_dataset(&items, orchestrator, reflector, config)
}

/// [`train`] over items whose gold may be unreadable. Such an episode is
/// logged as failed with zero utility and the run moves on.
pub fn train_dataset(
    dataset: &[DatasetItem],
    orchestrator: &Orchestrator,
    reflector: Option<&Arc<dyn GenerationBackend>>,
    config: &TrainConfig,
) -> Result<TrainSummary, EvolutionError> {
    if dataset.is_empty() {
        return Err(EvolutionError::EmptyDataset);
    }
    let strategies = orchestrator.strategies.clone();
    let workers = orchestrator.skills.as_ref().map(|r| r.local.clone());
    std::fs::create_dir_all(config.out_dir.join("episodes"))?;
    let mut metrics = std::fs::OpenOptions::new().create(true).append(true).open(config.out_dir.join("metrics.jsonl"))?;
    let opts = ReflectOptions { attempts: config.reflect_attempts, clock: orchestrator.clock.clone() };

    let mut seen: Vec<String> = Vec::new();
    let mut reports: Vec<ErrorReport> = Vec::new();
    let mut logs = Vec::new();
    for k in 0..config.episodes.unwrap_or(dataset.len()) {
        let DatasetItem { query, gold } = &dataset[k % dataset.len()];
        let gold = match gold {
            Ok(g) => g,
            Err(e) => {
                let log = EpisodeLog {
                    episode: k,
                    query: query.text.clone(),
                    cluster: String::new(),
                    strategy: None,
                    utility: 0.0,
                    row_f1: 0.0,
                    round2: false,
                    added: Consolidation::default(),
                    monotone: true,
                    strategy_bank_hash: strategies.bank_hash()?,
                    worker_bank_hash: workers.as_ref().map(|w| w.bank_hash()).transpose()?,
                    error: Some(format!("malformed gold table: {e}")),
                };
                log::warn!("episode {k}: malformed gold table: {e}");
                serde_json::to_writer(&mut metrics, &log).map_err(std::io::Error::other)?;
                metrics.write_all(b"\n")?;
                logs.push(log);
                continue;
            }
        };
        let prior_o = strategies.snapshot()?;
        let prior_w = workers.as_ref().map(|w| w.snapshot()).transpose()?;

        let dir = config.out_dir.join("episodes").join(k.to_string());
        let episode = run_episode(k, query, gold, orchestrator, &dir, &config.comparator)?;
        let digester = config.digest_backend.as_ref().or(reflector);
        let report = verify(&episode, gold, config.low_accuracy_threshold, digester, &orchestrator.clock);
        std::fs::write(dir.join("report.json"), serde_json::to_vec_pretty(&report).map_err(std::io::Error::other)?)?;

        if !seen.contains(&query.text) {
            seen.push(query.text.clone());
        }
        reports.push(report.clone());
        let clusters = cluster_queries(&seen, reflector, &orchestrator.clock);
        let (cluster, members) = clusters
            .iter()
            .find(|(_, m)| m.contains(&query.text))
            .map(|(l, m)| (l.clone(), m.clone()))
            .expect("the current query is clustered");

        let mut error = episode.error.clone();
        let reflection = if report.is_clean() {
            ReflectionOutput::default()
        } else {
            let own = std::iter::once((cluster.clone(), members)).collect();
            match reflect(&own, &reports, &strategies, reflector, &opts) {
                Ok(r) => r,
                Err(e) => {
                    log::warn!("episode {k}: {e}");
                    error.get_or_insert_with(|| e.to_string());
                    ReflectionOutput::default()
                }
            }
        };
        let added = consolidate(&strategies, workers.as_deref(), &reflection, &report)?;

        let after_o = strategies.snapshot()?;
        let after_w = workers.as_ref().map(|w| w.snapshot()).transpose()?;
        let monotone = prior_o.is_subset_of(&after_o)
            && match (&prior_w, &after_w) {
                (Some(a), Some(b)) => a.is_subset_of(b),
                _ => true,
            };
        let log = EpisodeLog {
            episode: k,
            query: query.text.clone(),
            cluster,
            strategy: report.strategy.clone(),
            utility: report.utility,
            row_f1: report.row_f1,
            round2: report.round2,
            added,
            monotone,
            strategy_bank_hash: after_o.hash(),
            worker_bank_hash: after_w.as_ref().map(|s| s.hash()),
            error,
        };
        log::info!("episode {k}: utility {:.4}", log.utility);
        serde_json::to_writer(&mut metrics, &log).map_err(std::io::Error::other)?;
        metrics.write_all(b"\n")?;
        logs.push(log);
    }
    if config.freeze {
        strategies.freeze()?;
        if let Some(w) = &workers {
            w.freeze()?;
        }
    }
    Ok(TrainSummary {
        episodes: logs,
        strategy_bank_hash: strategies.bank_hash()?,
        worker_bank_hash: workers.as_ref().map(|w| w.bank_hash()).transpose()?,
    })
}
