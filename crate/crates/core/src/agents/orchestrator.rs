//! One episode end to end: route, decompose, dispatch, validate, Round 2,
//! aggregate. Artifacts land in a run directory:
//!
//! ```text
//! run_dir/board.md          final workboard
//! run_dir/traj/{id}.jsonl   one trajectory per worker
//! run_dir/output.md         aggregated table
//! run_dir/run.json          route, subtasks, verdict, worker summaries
//! run_dir/sandbox/{id}/     per-worker scratch space
//! ```

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use super::aggregate::{aggregate, slot_rows, Aggregated};
use super::decompose::decompose;
use super::dispatch::{dispatch_wave, ActiveWorkerSet};
use super::router::{route_task, RouteDecision};
use super::validate::{trigger_round2, validate_outputs, Verdict};
use super::worker::{WorkerContext, WorkerReport};
use super::{AgentError, OrchestratorConfig, SubtaskRole, SubtaskSpec, WorkerConfig};
use crate::backend::GenerationBackend;
use crate::clock::Clock;
use crate::query::Query;
use crate::skills::{Skill, SkillBank, SkillResolver};
use crate::table::{render_table, row_key};
use crate::tools::{Sandbox, ToolContext, ToolRegistry, WebEnvironment};
use crate::trajectory::{Anomaly, Trajectory};
use crate::workboard::{BoardFile, NewSubtask, Status, Workboard};

/// The upper-level policy plus everything its workers share.
#[derive(Clone)]
pub struct Orchestrator {
    pub config: OrchestratorConfig,
    pub worker: WorkerConfig,
    /// Decomposition skills and the router (S_o).
    pub strategies: Arc<SkillBank>,
    /// Execution skills (S_w).
    pub skills: Option<SkillResolver>,
    /// Routing and decomposition; `None` means rule lines and single-subtask plans.
    pub planner: Option<Arc<dyn GenerationBackend>>,
    pub worker_backend: Arc<dyn GenerationBackend>,
    pub repair_backend: Option<Arc<dyn GenerationBackend>>,
    pub env: Arc<dyn WebEnvironment>,
    pub clock: Clock,
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkerSummary {
    pub id: String,
    pub partition: String,
    pub role: SubtaskRole,
    pub round: u8,
    pub status: Status,
    /// Unique rows parsed from the slot.
    pub rows: usize,
    pub steps: usize,
    pub anomalies: Vec<Anomaly>,
    pub errors: Vec<String>,
    pub search_queries: Vec<String>,
    pub skill_used: Option<String>,
    pub repaired_skills: Vec<String>,
}

#[derive(Debug, Serialize)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub route: RouteDecision,
    pub strategy_skill: Option<String>,
    pub specs: Vec<SubtaskSpec>,
    /// Verdict after the first pass, which decides Round 2.
    pub verdict: Verdict,
    /// Verdict over every slot, Round 2 included.
    pub final_verdict: Verdict,
    pub round2: Vec<SubtaskSpec>,
    pub workers: Vec<WorkerSummary>,
    pub peak_concurrency: usize,
    #[serde(skip)]
    pub trajectories: Vec<Trajectory>,
    #[serde(skip)]
    pub board: Workboard,
    #[serde(serialize_with = "ser_aggregate")]
    pub aggregate: Result<Aggregated, AgentError>,
}

fn ser_aggregate<S: serde::Serializer>(a: &Result<Aggregated, AgentError>, s: S) -> Result<S::Ok, S::Error> {
    #[derive(Serialize)]
    struct Repr<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        ok: Option<&'a Aggregated>,
        #[serde(skip_serializing_if = "Option::is_none")]
        rows: Option<usize>,
        #[serde(skip_serializing_if = "Option::is_none")]
        error: Option<String>,
    }
    match a {
        Ok(agg) => Repr { ok: Some(agg), rows: Some(agg.table.row_count()), error: None }.serialize(s),
        Err(e) => Repr { ok: None, rows: None, error: Some(e.to_string()) }.serialize(s),
    }
}

impl RunOutcome {
    pub fn table(&self) -> Option<&crate::table::Table> {
        self.aggregate.as_ref().ok().map(|a| &a.table)
    }

    pub fn round2_dispatched(&self) -> bool {
        !self.round2.is_empty()
    }
}

fn shared_context(query: &Query, route: &RouteDecision, specs: &[SubtaskSpec]) -> String {
    let mut s = format!("Query: {}\nStrategy: {}\nColumns: {}\nPartitions:\n", query.text.trim(), route.label, specs[0].schema.names().join(", "));
    for sp in specs {
        s.push_str(&format!("- {}: {} (target {}-{} rows)\n", sp.id, sp.partition, sp.target_volume[0], sp.target_volume[1]));
    }
    s.push_str("Write \"NA\" for any cell you cannot find.");
    s
}

impl Orchestrator {
    pub fn new(strategies: Arc<SkillBank>, worker_backend: Arc<dyn GenerationBackend>, env: Arc<dyn WebEnvironment>) -> Self {
        Orchestrator {
            config: OrchestratorConfig::default(),
            worker: WorkerConfig::default(),
            strategies,
            skills: None,
            planner: None,
            worker_backend,
            repair_backend: None,
            env,
            clock: Clock::System,
        }
    }

    fn contexts(&self, specs: &[SubtaskSpec], board: &BoardFile, run_dir: &Path) -> Result<(Vec<WorkerContext>, Vec<Clock>), AgentError> {
        let registry = ToolRegistry::for_worker(self.skills.as_ref())
            .with_default_timeout(self.worker.tool_timeout)
            .with_observation_cap(self.worker.observation_cap);
        let mut out = Vec::new();
        let mut clocks = Vec::new();
        for spec in specs {
            let clock = self.clock.fork();
            clocks.push(clock.clone());
            out.push(WorkerContext {
                spec: spec.clone(),
                config: self.worker.clone(),
                registry: registry.clone(),
                tools: ToolContext {
                    worker_id: spec.id.clone(),
                    sandbox: Sandbox::create(run_dir.join("sandbox").join(&spec.id))?,
                    board: board.clone(),
                    env: self.env.clone(),
                    skills: self.skills.clone(),
                    clock,
                    timeout: self.worker.tool_timeout,
                },
                backend: self.worker_backend.clone(),
                skill: None,
                repair_backend: self.repair_backend.clone(),
            });
        }
        Ok((out, clocks))
    }

    fn wave(&self, specs: &[SubtaskSpec], board: &BoardFile, run_dir: &Path, active: &ActiveWorkerSet) -> Result<Vec<WorkerReport>, AgentError> {
        if specs.is_empty() {
            return Ok(Vec::new());
        }
        let (ctxs, clocks) = self.contexts(specs, board, run_dir)?;
        let start = self.clock.now_ms();
        let reports = dispatch_wave(ctxs, active);
        // The wave ends when its slowest worker does.
        let end = clocks.iter().map(Clock::now_ms).max().unwrap_or(start);
        self.clock.advance(std::time::Duration::from_millis(end.saturating_sub(self.clock.now_ms())));
        Ok(reports)
    }

    /// Runs one episode on `query`, writing artifacts under `run_dir`.
    pub fn run(&self, query: &Query, run_dir: &Path) -> Result<RunOutcome, AgentError> {
        self.config.validate().map_err(AgentError::DecompositionInvalid)?;
        std::fs::create_dir_all(run_dir.join("traj"))?;
        let route = route_task(query, &self.strategies, self.planner.as_ref(), self.config.router_fallback, &self.clock)?;
        let skill_name = format!("decompose-{}", route.label);
        let found = self.strategies.get(&skill_name);
        let strategy_skill = found.as_ref().map(|s| s.name.clone());
        let strategy = found.unwrap_or_else(|| {
            Skill::knowledge(&skill_name, "generic decomposition", format!("Split the query {}.", route.label.replace('-', " ")))
        });
        let specs = decompose(query, &route.label, &strategy, self.planner.as_ref(), &self.config, &self.clock)?;
        let schema = specs[0].schema.clone();

        let board = BoardFile::new(run_dir.join("board.md"));
        let subtasks: Vec<NewSubtask> = specs.iter().map(|s| NewSubtask { id: s.id.clone(), summary: s.partition.clone() }).collect();
        board.init(&subtasks, &shared_context(query, &route, &specs))?;

        let active = ActiveWorkerSet::new(self.config.max_workers);
        let (audits, extracts): (Vec<SubtaskSpec>, Vec<SubtaskSpec>) = specs.iter().cloned().partition(|s| s.role.is_audit());
        let mut reports = self.wave(&extracts, &board, run_dir, &active)?;
        reports.extend(self.wave(&audits, &board, run_dir, &active)?);

        let verdict = validate_outputs(&board.read()?, &specs, &schema);
        let round2 = trigger_round2(&verdict, &specs, query, &self.config, false);
        let mut all_specs = specs.clone();
        if !round2.is_empty() {
            log::info!("round 2: {} follow-ups, missing fraction {:.3}", round2.len(), verdict.missing_fraction);
            let subs: Vec<NewSubtask> = round2.iter().map(|s| NewSubtask { id: s.id.clone(), summary: format!("round 2: {}", s.partition) }).collect();
            board.append_subtasks(&subs)?;
            reports.extend(self.wave(&round2, &board, run_dir, &active)?);
            all_specs.extend(round2.iter().cloned());
        }

        let final_board = board.read()?;
        let final_verdict = validate_outputs(&final_board, &all_specs, &schema);
        let aggregate = aggregate(&final_board, &all_specs, &schema, query);
        if let Ok(a) = &aggregate {
            std::fs::write(run_dir.join("output.md"), render_table(&a.table))?;
        }

        let mut workers = Vec::new();
        for r in &reports {
            r.trajectory.save(&run_dir.join("traj").join(format!("{}.jsonl", r.id)))?;
            let spec = all_specs.iter().find(|s| s.id == r.id).expect("report for a known spec");
            let rows: HashSet<Vec<String>> = slot_rows(final_board.slot(&r.id).unwrap_or_default(), &schema)
                .iter()
                .map(|row| row_key(row).into_iter().map(String::from).collect())
                .collect();
            workers.push(WorkerSummary {
                id: r.id.clone(),
                partition: spec.partition.clone(),
                role: spec.role,
                round: spec.round,
                status: r.status,
                rows: rows.len(),
                steps: r.trajectory.steps.len(),
                anomalies: r.trajectory.anomalies.clone(),
                errors: r.errors.clone(),
                search_queries: r.search_queries.clone(),
                skill_used: r.skill_used.clone(),
                repaired_skills: r.repaired_skills.clone(),
            });
        }

        let outcome = RunOutcome {
            run_dir: run_dir.to_path_buf(),
            route,
            strategy_skill,
            specs,
            verdict,
            final_verdict,
            round2,
            workers,
            peak_concurrency: active.peak(),
            trajectories: reports.into_iter().map(|r| r.trajectory).collect(),
            board: final_board,
            aggregate,
        };
        let json = serde_json::to_vec_pretty(&outcome).map_err(|e| AgentError::Io(std::io::Error::other(e)))?;
        std::fs::write(run_dir.join("run.json"), json)?;
        Ok(outcome)
    }
}
