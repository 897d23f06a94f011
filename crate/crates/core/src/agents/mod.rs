//! The orchestrator (route, decompose, validate, Round 2, aggregate) and the
//! workers it dispatches.

mod aggregate;
mod decompose;
mod dispatch;
mod judge;
mod orchestrator;
mod router;
mod validate;
mod worker;

use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate, date_sort_key, Aggregated};
pub use decompose::{decompose, DecompositionRules};
pub use dispatch::{dispatch_wave, ActiveWorkerSet};
pub use judge::BackendJudge;
pub use orchestrator::{Orchestrator, RunOutcome, WorkerSummary};
pub use router::{
    extract_features, fallback_route, parse_router_rules, route_task, QueryFeatures, RouteDecision, RouteSource,
    RouterRule, ROUTER_SKILL, STRATEGY_LABELS,
};
pub use validate::{trigger_round2, validate_outputs, SpecShortfall, Verdict};
pub use worker::{parse_action, run_worker, WorkerAction, WorkerContext, WorkerReport};

use crate::table::{TableError, TableSchema};
use crate::workboard::WorkboardError;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no decomposition strategy could be selected")]
    NoStrategy,
    #[error("decomposition invalid: {0}")]
    DecompositionInvalid(String),
    #[error("every worker slot is empty or unparseable")]
    EmptyResult,
    #[error(transparent)]
    Workboard(#[from] WorkboardError),
    #[error(transparent)]
    Skill(#[from] crate::skills::SkillError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskRole {
    /// Collects the rows of one partition.
    Extract,
    /// Audits peers' coverage after they finish.
    GapDetection,
    /// Cross-checks peers' rows against a second source.
    Verification,
    /// Round-2 work on a partition that fell short.
    FollowUp,
}

impl SubtaskRole {
    /// Audit roles run after the extraction wave and carry no volume target.
    pub fn is_audit(self) -> bool {
        matches!(self, SubtaskRole::GapDetection | SubtaskRole::Verification)
    }
}

/// One worker's assignment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    /// Slot tag on the workboard (`t1`, `t2`, ...).
    pub id: String,
    pub instruction: String,
    /// Descriptor of the data slice (entity, window, source, region).
    pub partition: String,
    pub schema: TableSchema,
    pub target_volume: [u32; 2],
    pub role: SubtaskRole,
    pub round: u8,
}

impl SubtaskSpec {
    pub fn midpoint(&self) -> f64 {
        f64::from(self.target_volume[0] + self.target_volume[1]) / 2.0
    }
}

pub const DEFAULT_TARGET_VOLUME: [u32; 2] = [10, 20];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    /// Worker pool ceiling N.
    pub max_workers: usize,
    /// Round 2 fires when the missing fraction is strictly above this.
    pub round2_missing_threshold: f64,
    pub decompose_attempts: u32,
    /// Use the structural heuristic when no router skill decides.
    pub router_fallback: bool,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        OrchestratorConfig { max_workers: 10, round2_missing_threshold: 0.10, decompose_attempts: 3, router_fallback: true }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_workers == 0 {
            return Err("max_workers must be at least 1".into());
        }
        if !(self.round2_missing_threshold > 0.0 && self.round2_missing_threshold <= 1.0) {
            return Err("round2_missing_threshold must be in (0, 1]".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkerConfig {
    /// Step bound T_max.
    pub max_steps: u32,
    #[serde(with = "secs")]
    pub generation_timeout: Duration,
    #[serde(with = "secs")]
    pub tool_timeout: Duration,
    pub observation_cap: usize,
    /// Consecutive generation timeouts after which the worker gives up.
    pub max_generation_timeouts: u32,
    /// Most recent steps echoed back in the prompt.
    pub history_window: usize,
}

impl Default for WorkerConfig {
    fn default() -> Self {
        WorkerConfig {
            max_steps: 20,
            generation_timeout: crate::backend::DEFAULT_GENERATION_TIMEOUT,
            tool_timeout: crate::tools::DEFAULT_TOOL_TIMEOUT,
            observation_cap: crate::tools::DEFAULT_OBSERVATION_CAP,
            max_generation_timeouts: 3,
            history_window: 6,
        }
    }
}

impl WorkerConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.max_steps == 0 {
            return Err("max_steps must be at least 1".into());
        }
        Ok(())
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(serde::de::Error::custom("duration must be a non-negative number of seconds"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}
