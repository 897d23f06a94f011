//! Episode execution against gold and the error report it produces.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::EvolutionError;
use crate::agents::{Orchestrator, RunOutcome, SubtaskRole, WorkerSummary};
use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::prompts::{self, fill};
use crate::query::Query;
use crate::scoring::{score, ColumnAccuracy, ComparatorConfig, ScoreReport};
use crate::table::{header_key, render_table, Table};
use crate::trajectory::{AnomalyKind, StepKind, Trajectory};
use crate::workboard::Status;

pub const DEFAULT_LOW_ACCURACY_THRESHOLD: f64 = 0.8;
pub const UNCATEGORISED: &str = "uncategorised";

/// What one episode produced, archived under `dir`.
pub struct Episode {
    pub index: usize,
    pub query: Query,
    pub dir: PathBuf,
    pub outcome: Option<RunOutcome>,
    /// Aggregated table, empty when the run produced nothing.
    pub table: Table,
    /// Item F1 against gold.
    pub utility: f64,
    pub score: ScoreReport,
    pub error: Option<String>,
}

/// Runs `query` with the orchestrator's current banks into `dir` (which must
/// be fresh) and scores it. Failures become a zero-utility episode.
pub fn run_episode(
    index: usize,
    query: &Query,
    gold: &Table,
    orchestrator: &Orchestrator,
    dir: &Path,
    cmp: &ComparatorConfig,
) -> Result<Episode, EvolutionError> {
    if dir.exists() && dir.read_dir()?.next().is_some() {
        return Err(EvolutionError::EpisodeDirExists(dir.display().to_string()));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("gold.md"), render_table(gold))?;
    let (outcome, table, error) = match orchestrator.run(query, dir) {
        Ok(o) => {
            let (t, e) = match &o.aggregate {
                Ok(a) => (a.table.clone(), None),
                Err(e) => (Table::empty(gold.schema().clone()), Some(e.to_string())),
            };
            (Some(o), t, e)
        }
        Err(e) => {
            log::warn!("episode {index} failed: {e}");
            (None, Table::empty(gold.schema().clone()), Some(e.to_string()))
        }
    };
    let report = score(&table, gold, cmp);
    let utility = report.item_f1;
    Ok(Episode { index, query: query.clone(), dir: dir.to_path_buf(), outcome, table, utility, score: report, error })
}

/// Gold-free summary of one worker's trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryDigest {
    pub worker_id: String,
    pub partition: String,
    pub strategy_applied: String,
    pub queries_issued: Vec<String>,
    /// URLs the worker fetched.
    pub sources: Vec<String>,
    pub failure_points: Vec<String>,
    pub rows_delivered: usize,
    pub target_volume: [u32; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportedAnomaly {
    pub worker_id: String,
    pub kind: AnomalyKind,
    pub step: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub episode: usize,
    pub query: String,
    pub strategy: Option<String>,
    pub utility: f64,
    pub row_f1: f64,
    pub missing_row_categories: Vec<String>,
    pub low_accuracy_columns: Vec<ColumnAccuracy>,
    pub trajectory_anomalies: Vec<ReportedAnomaly>,
    pub digests: Vec<TrajectoryDigest>,
    pub round2: bool,
    pub error: Option<String>,
}

impl ErrorReport {
    /// Nothing to learn: perfect utility, no anomalies, no failure.
    pub fn is_clean(&self) -> bool {
        self.utility >= 1.0
            && self.missing_row_categories.is_empty()
            && self.low_accuracy_columns.is_empty()
            && self.trajectory_anomalies.is_empty()
            && self.error.is_none()
    }
}

fn fetched_urls(t: &Trajectory) -> Vec<String> {
    t.steps
        .iter()
        .filter(|s| s.kind == StepKind::ToolCall && s.tool.as_deref() == Some("fetch"))
        .filter_map(|s| s.args.as_ref()?.get("url")?.as_str().map(String::from))
        .collect()
}

fn digest_of(
    w: &WorkerSummary,
    t: Option<&Trajectory>,
    target: [u32; 2],
    strategy: &str,
    backend: Option<&Arc<dyn GenerationBackend>>,
    clock: &Clock,
) -> TrajectoryDigest {
    let mut failure_points: Vec<String> = w.anomalies.iter().map(|a| format!("{:?} at step {}", a.kind, a.step)).collect();
    failure_points.extend(w.errors.iter().cloned());
    if w.status == Status::Failed {
        failure_points.push("worker failed".into());
    }
    let summary = backend.and_then(|b| {
        let steps = t.map_or_else(String::new, |t| {
            t.steps
                .iter()
                .map(|s| format!("{} {:?} {}", s.index, s.kind, s.tool.as_deref().unwrap_or("-")))
                .collect::<Vec<_>>()
                .join("\n")
        });
        let prompt = fill(
            prompts::DIGEST,
            &[("partition", &w.partition), ("status", &w.status.to_string()), ("steps", &steps)],
        );
        generate_bounded(b, GenerationRequest::new(prompt).with_clock(clock.clone())).ok().map(|s| s.trim().to_string())
    });
    TrajectoryDigest {
        worker_id: w.id.clone(),
        partition: w.partition.clone(),
        strategy_applied: strategy.to_string(),
        queries_issued: w.search_queries.clone(),
        sources: t.map(fetched_urls).unwrap_or_default(),
        failure_points,
        rows_delivered: w.rows,
        target_volume: target,
        summary,
    }
}

/// Extraction partitions whose descriptor the row satisfies: the row text
/// contains the partition name, or failing that its leading segment.
fn category_of(row: &[crate::table::Cell], partitions: &[&str]) -> String {
    let text = header_key(&row.iter().map(|c| c.raw.as_str()).collect::<Vec<_>>().join(" "));
    let contains = |needle: &str| {
        let k = header_key(needle);
        !k.is_empty() && text.contains(&k)
    };
    if let Some(p) = partitions.iter().find(|p| contains(p)) {
        return p.to_string();
    }
    for p in partitions {
        let head = p.split(':').next().unwrap_or(p);
        if contains(head) {
            return head.trim().to_string();
        }
    }
    UNCATEGORISED.to_string()
}

/// Builds the error report. Gold is read here and nowhere earlier.
pub fn verify(
    episode: &Episode,
    gold: &Table,
    low_accuracy_threshold: f64,
    digest_backend: Option<&Arc<dyn GenerationBackend>>,
    clock: &Clock,
) -> ErrorReport {
    let mut digests = Vec::new();
    let mut anomalies = Vec::new();
    let mut partitions: Vec<&str> = Vec::new();
    let strategy = episode.outcome.as_ref().map(|o| o.route.label.clone());
    if let Some(o) = &episode.outcome {
        for s in &o.specs {
            if s.role == SubtaskRole::Extract {
                partitions.push(&s.partition);
            }
        }
        for w in &o.workers {
            let t = o.trajectories.iter().find(|t| t.worker_id == w.id);
            let target = o.specs.iter().chain(&o.round2).find(|s| s.id == w.id).map_or([0, 0], |s| s.target_volume);
            digests.push(digest_of(w, t, target, strategy.as_deref().unwrap_or(""), digest_backend, clock));
            for a in &w.anomalies {
                anomalies.push(ReportedAnomaly { worker_id: w.id.clone(), kind: a.kind, step: a.step });
            }
        }
    }
    let mut missing: Vec<String> = Vec::new();
    for &g in &episode.score.unmatched_gold_rows {
        let c = category_of(&gold.rows()[g], &partitions);
        if !missing.contains(&c) {
            missing.push(c);
        }
    }
    let low = if gold.row_count() == 0 {
        Vec::new()
    } else {
        episode.score.per_column_accuracy.iter().filter(|c| c.accuracy < low_accuracy_threshold).cloned().collect()
    };
    ErrorReport {
        episode: episode.index,
        query: episode.query.text.clone(),
        strategy,
        utility: episode.utility,
        row_f1: episode.score.row_f1,
        missing_row_categories: missing,
        low_accuracy_columns: low,
        trajectory_anomalies: anomalies,
        digests,
        round2: episode.outcome.as_ref().is_some_and(RunOutcome::round2_dispatched),
        error: episode.error.clone(),
    }
}
