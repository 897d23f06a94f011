//! The worker ReAct loop: generate an action, run a tool or respond, repeat
//! up to the step bound.

use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;
use serde_json::Value;

use super::{SubtaskSpec, WorkerConfig};
use crate::backend::{generate_bounded, BackendError, GenerationBackend, GenerationRequest};
use crate::prompts::{self, fill};
use crate::skills::{repair_skill, strip_fence, Skill, SkillKind};
use crate::tools::{dispatch_tool, SkillTool, ToolContext, ToolError, ToolRegistry};
use crate::trajectory::{AnomalyKind, StepKind, Trajectory, TrajectoryStep};
use crate::workboard::{Actor, Status, WriteMode};

/// Everything one worker needs. `tools.clock` should be a fork per worker.
#[derive(Clone)]
pub struct WorkerContext {
    pub spec: SubtaskSpec,
    pub config: WorkerConfig,
    pub registry: ToolRegistry,
    pub tools: ToolContext,
    pub backend: Arc<dyn GenerationBackend>,
    /// Execution skill; resolved from the instruction when absent.
    pub skill: Option<Skill>,
    /// When set, a failing function skill is repaired once with this backend.
    pub repair_backend: Option<Arc<dyn GenerationBackend>>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WorkerAction {
    Tool { name: String, args: Value },
    Respond(String),
    Invalid(String),
}

/// Reads the first JSON object in `reply` as an action.
pub fn parse_action(reply: &str) -> WorkerAction {
    let s = strip_fence(reply);
    let body = match (s.find('{'), s.rfind('}')) {
        (Some(a), Some(b)) if a < b => &s[a..=b],
        _ => return WorkerAction::Invalid("reply holds no JSON object".into()),
    };
    let v: Value = match serde_json::from_str(body) {
        Ok(v) => v,
        Err(e) => return WorkerAction::Invalid(format!("reply is not valid JSON: {e}")),
    };
    if let Some(r) = v.get("response").and_then(Value::as_str) {
        return WorkerAction::Respond(r.to_string());
    }
    match v.get("tool").and_then(Value::as_str) {
        Some(name) => WorkerAction::Tool {
            name: name.to_string(),
            args: v.get("args").cloned().unwrap_or_else(|| Value::Object(Default::default())),
        },
        None => WorkerAction::Invalid("reply has neither \"tool\" nor \"response\"".into()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct WorkerReport {
    pub id: String,
    pub status: Status,
    /// Text written to the slot by the terminal response.
    pub output: String,
    pub trajectory: Trajectory,
    pub errors: Vec<String>,
    pub search_queries: Vec<String>,
    pub skill_used: Option<String>,
    pub repaired_skills: Vec<String>,
}

fn digest(text: &str) -> String {
    crate::sha256_hex(text.as_bytes())[..16].to_string()
}

fn timeout_marker(d: Duration) -> String {
    format!("[tool timed out after {}s]", d.as_secs_f64())
}

struct Loop {
    ctx: WorkerContext,
    traj: Trajectory,
    history: Vec<String>,
    report_errors: Vec<String>,
    queries: Vec<String>,
    repaired: Vec<String>,
}

impl Loop {
    fn prompt(&self, step: u32, skill: &str) -> String {
        let spec = &self.ctx.spec;
        let window = self.ctx.config.history_window;
        let recent = &self.history[self.history.len().saturating_sub(window)..];
        let board = self.ctx.tools.board.read().map(|b| b.render()).unwrap_or_else(|e| format!("(unreadable: {e})"));
        fill(
            prompts::WORKER,
            &[
                ("id", &spec.id),
                ("role", &format!("{:?}", spec.role)),
                ("step", &(step + 1).to_string()),
                ("max_steps", &self.ctx.config.max_steps.to_string()),
                ("instruction", &spec.instruction),
                ("partition", &spec.partition),
                ("columns", &spec.schema.names().join(", ")),
                ("lo", &spec.target_volume[0].to_string()),
                ("hi", &spec.target_volume[1].to_string()),
                ("skill", skill),
                ("tools", &self.ctx.registry.describe()),
                ("board", &board),
                ("history", &if recent.is_empty() { "(none)".to_string() } else { recent.join("\n") }),
            ],
        )
    }

    fn set_status(&mut self, status: Status) {
        let id = self.ctx.spec.id.clone();
        if let Err(e) = self.ctx.tools.board.set_status(&id, status, &Actor::Worker(id.clone())) {
            self.report_errors.push(format!("status {status}: {e}"));
        }
    }

    /// Repairs a failing function skill and swaps the new version into the registry.
    fn try_repair(&mut self, name: &str, trace: &str) {
        let (Some(backend), Some(res)) = (self.ctx.repair_backend.clone(), self.ctx.tools.skills.clone()) else {
            return;
        };
        if self.repaired.iter().any(|r| r == name) {
            return;
        }
        let Some(skill) = res.local.get(name) else { return };
        if skill.kind != SkillKind::Function || res.local.is_read_only() || res.local.is_frozen() {
            return;
        }
        let mut opts = res.synthesis.clone();
        opts.clock = self.ctx.tools.clock.clone();
        self.repaired.push(name.to_string());
        match repair_skill(&res.local, name, trace, &backend, &opts) {
            Ok(fixed) => self.ctx.registry.register(Arc::new(SkillTool::new(fixed))),
            Err(e) => self.report_errors.push(format!("repair {name}: {e}")),
        }
    }

    fn call_tool(&mut self, index: u32, name: String, args: Value) {
        let clock = self.ctx.tools.clock.clone();
        let start = clock.now_ms();
        if name == "search" {
            if let Some(q) = args.get("query").and_then(Value::as_str) {
                self.queries.push(q.to_string());
            }
        }
        let text = match dispatch_tool(&self.ctx.registry, &name, &args, &self.ctx.tools) {
            Ok(obs) => {
                if obs.truncated {
                    self.traj.record_anomaly(AnomalyKind::ContextTruncation, index);
                }
                obs.text
            }
            Err(ToolError::Timeout) => {
                self.traj.record_anomaly(AnomalyKind::ToolTimeout, index);
                timeout_marker(self.ctx.registry.timeout_for(&name))
            }
            Err(e) => {
                let msg = format!("error: {e}");
                self.report_errors.push(format!("{name}: {e}"));
                if matches!(e, ToolError::Failed(_) | ToolError::Io(_)) {
                    self.try_repair(&name, &msg);
                }
                msg
            }
        };
        self.traj.push(TrajectoryStep {
            index,
            ts: start,
            kind: StepKind::ToolCall,
            tool: Some(name.clone()),
            args: Some(args.clone()),
            obs_digest: Some(digest(&text)),
            latency_ms: clock.now_ms().saturating_sub(start),
        });
        self.history.push(format!("step {}: {name} {args}\n{text}", index + 1));
    }
}

/// Runs one subtask to completion. Failures never surface as errors: they end
/// in status `failed` with anomalies and messages in the report.
pub fn run_worker(ctx: WorkerContext) -> WorkerReport {
    let id = ctx.spec.id.clone();
    let clock = ctx.tools.clock.clone();
    let mut lp = Loop {
        traj: Trajectory::new(id.clone()),
        history: Vec::new(),
        report_errors: Vec::new(),
        queries: Vec::new(),
        repaired: Vec::new(),
        ctx,
    };
    lp.set_status(Status::Running);

    let skill = match lp.ctx.skill.clone() {
        Some(s) => Some(s),
        None => match lp.ctx.tools.skills.as_ref().map(|r| r.resolve(&lp.ctx.spec.instruction)) {
            Some(Ok(r)) => Some(r.skill),
            Some(Err(e)) => {
                log::debug!("{id}: no execution skill: {e}");
                None
            }
            None => None,
        },
    };
    let skill_text = skill.as_ref().map_or_else(|| "(none)".to_string(), |s| format!("{}\n{}", s.name, s.body));

    let mut status = Status::Failed;
    let mut output = String::new();
    let mut timeouts = 0u32;
    let mut gave_up = false;
    for step in 0..lp.ctx.config.max_steps {
        let index = lp.traj.next_index();
        let mut req = GenerationRequest::new(lp.prompt(step, &skill_text)).with_clock(clock.clone());
        req.timeout_s = lp.ctx.config.generation_timeout.as_secs().max(1);
        let started = clock.now_ms();
        let reply = match generate_bounded(&lp.ctx.backend, req) {
            Ok(r) => {
                timeouts = 0;
                r
            }
            Err(BackendError::Timeout) => {
                lp.traj.record_anomaly(AnomalyKind::GenerationTimeout, index);
                timeouts += 1;
                if timeouts >= lp.ctx.config.max_generation_timeouts {
                    lp.report_errors.push(format!("{timeouts} consecutive generation timeouts"));
                    gave_up = true;
                    break;
                }
                continue;
            }
            Err(e) => {
                lp.report_errors.push(format!("generation: {e}"));
                lp.history.push(format!("step {}: generation failed: {e}", index + 1));
                continue;
            }
        };
        match parse_action(&reply) {
            WorkerAction::Tool { name, args } => lp.call_tool(index, name, args),
            WorkerAction::Respond(text) => {
                match lp.ctx.tools.board.edit_slot(&id, &text, WriteMode::Append) {
                    Ok(_) => {
                        lp.traj.push(TrajectoryStep {
                            index,
                            ts: started,
                            kind: StepKind::Response,
                            tool: None,
                            args: None,
                            obs_digest: Some(digest(&text)),
                            latency_ms: clock.now_ms().saturating_sub(started),
                        });
                        output = text;
                        status = Status::Done;
                        break;
                    }
                    Err(e) => {
                        let msg = format!("response rejected: {e}");
                        lp.report_errors.push(msg.clone());
                        lp.traj.push(TrajectoryStep {
                            index,
                            ts: started,
                            kind: StepKind::ToolCall,
                            tool: None,
                            args: None,
                            obs_digest: Some(digest(&msg)),
                            latency_ms: 0,
                        });
                        lp.history.push(format!("step {}: {msg}", index + 1));
                    }
                }
            }
            WorkerAction::Invalid(why) => {
                lp.traj.push(TrajectoryStep {
                    index,
                    ts: started,
                    kind: StepKind::ToolCall,
                    tool: None,
                    args: None,
                    obs_digest: Some(digest(&why)),
                    latency_ms: clock.now_ms().saturating_sub(started),
                });
                lp.history.push(format!("step {}: invalid action: {why}", index + 1));
            }
        }
    }
    if status != Status::Done && !gave_up {
        let last = lp.traj.steps.last().map_or(0, |s| s.index);
        lp.traj.record_anomaly(AnomalyKind::StepLimit, last);
    }
    lp.set_status(status);
    WorkerReport {
        id,
        status,
        output,
        trajectory: lp.traj,
        errors: lp.report_errors,
        search_queries: lp.queries,
        skill_used: skill.map(|s| s.name),
        repaired_skills: lp.repaired,
    }
}
