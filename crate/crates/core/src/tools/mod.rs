//! Worker toolbox: the eight built-in tools, the web tools and function skills,
//! dispatched inside a per-worker sandbox with a timeout and an output cap.

mod builtin;
pub mod sandbox;
pub mod web;

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

pub use builtin::{run_sandboxed, SkillTool};
pub use sandbox::Sandbox;
pub use web::{
    record_fixture, EnvError, FixtureEnv, FixtureRecord, LiveEnv, LoggedRequest, MissPolicy, RecordMeta, RecordStatus, RecordingEnv,
    SearchHit, WebEnvironment,
};

use crate::clock::Clock;
use crate::skills::{SkillKind, SkillResolver};
use crate::workboard::BoardFile;

pub const DEFAULT_TOOL_TIMEOUT: Duration = Duration::from_secs(30);
pub const DEFAULT_OBSERVATION_CAP: usize = 16 * 1024;
pub const TRUNCATION_MARKER: &str = "…[truncated]";

/// Names of the built-in tools, in registry order.
pub const BUILTIN_TOOLS: [&str; 8] =
    ["bash", "str_replace", "file_create", "view", "read_skill", "route_skill", "read_workboard", "edit_workboard"];
pub const ENV_TOOLS: [&str; 2] = ["search", "fetch"];

#[derive(Debug, Error)]
pub enum ToolError {
    #[error("unknown tool {0:?}")]
    UnknownTool(String),
    #[error("path {0:?} escapes the sandbox")]
    SandboxViolation(String),
    #[error("tool timed out")]
    Timeout,
    #[error("invalid arguments: {0}")]
    InvalidArgs(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Env(EnvError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<EnvError> for ToolError {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::Timeout => ToolError::Timeout,
            other => ToolError::Env(other),
        }
    }
}

/// Everything a tool may touch on behalf of one worker.
#[derive(Clone)]
pub struct ToolContext {
    pub worker_id: String,
    pub sandbox: Sandbox,
    pub board: BoardFile,
    pub env: Arc<dyn WebEnvironment>,
    pub skills: Option<SkillResolver>,
    pub clock: Clock,
    /// Budget used by tools that run child processes to kill them in time.
    pub timeout: Duration,
}

pub trait Tool: Send + Sync {
    fn name(&self) -> &str;
    fn description(&self) -> &str;
    fn call(&self, args: &Value, ctx: &ToolContext) -> Result<String, ToolError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Observation {
    pub text: String,
    pub truncated: bool,
}

/// Cuts `text` so the result, marker included, fits in `cap` bytes.
pub fn truncate_observation(text: String, cap: usize) -> Observation {
    if text.len() <= cap {
        return Observation { text, truncated: false };
    }
    let mut end = cap.saturating_sub(TRUNCATION_MARKER.len());
    while !text.is_char_boundary(end) {
        end -= 1;
    }
    Observation { text: format!("{}{TRUNCATION_MARKER}", &text[..end]), truncated: true }
}

#[derive(Clone)]
pub struct ToolRegistry {
    tools: BTreeMap<String, Arc<dyn Tool>>,
    timeouts: BTreeMap<String, Duration>,
    default_timeout: Duration,
    observation_cap: usize,
}

impl ToolRegistry {
    /// Built-ins plus search/fetch.
    pub fn standard() -> Self {
        let mut r = ToolRegistry {
            tools: BTreeMap::new(),
            timeouts: BTreeMap::new(),
            default_timeout: DEFAULT_TOOL_TIMEOUT,
            observation_cap: DEFAULT_OBSERVATION_CAP,
        };
        for t in builtin::all() {
            r.register(t);
        }
        r
    }

    /// Standard tools plus every function skill visible through `skills`.
    pub fn for_worker(skills: Option<&SkillResolver>) -> Self {
        let mut r = Self::standard();
        if let Some(res) = skills {
            let mut banks = vec![res.local.clone()];
            banks.extend(res.remote.clone());
            for bank in banks {
                for s in bank.list() {
                    if s.kind == SkillKind::Function && !r.tools.contains_key(&s.name) {
                        r.register(Arc::new(SkillTool::new(s)));
                    }
                }
            }
        }
        r
    }

    pub fn register(&mut self, tool: Arc<dyn Tool>) {
        self.tools.insert(tool.name().to_string(), tool);
    }

    pub fn with_default_timeout(mut self, t: Duration) -> Self {
        self.default_timeout = t;
        self
    }

    pub fn set_timeout(&mut self, tool: &str, t: Duration) {
        self.timeouts.insert(tool.to_string(), t);
    }

    pub fn with_observation_cap(mut self, cap: usize) -> Self {
        self.observation_cap = cap;
        self
    }

    pub fn timeout_for(&self, tool: &str) -> Duration {
        self.timeouts.get(tool).copied().unwrap_or(self.default_timeout)
    }

    pub fn names(&self) -> Vec<String> {
        self.tools.keys().cloned().collect()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tools.contains_key(name)
    }

    /// `name: description` lines for prompts.
    pub fn describe(&self) -> String {
        self.tools.values().map(|t| format!("- {}: {}", t.name(), t.description())).collect::<Vec<_>>().join("\n")
    }
}

/// Runs `name` with the tool timeout against the context clock and caps the output.
pub fn dispatch_tool(registry: &ToolRegistry, name: &str, args: &Value, ctx: &ToolContext) -> Result<Observation, ToolError> {
    let tool = registry.tools.get(name).cloned().ok_or_else(|| ToolError::UnknownTool(name.to_string()))?;
    let timeout = registry.timeout_for(name);
    let mut task_ctx = ctx.clone();
    task_ctx.timeout = timeout;
    let args = args.clone();
    let text = ctx
        .clock
        .run_with_timeout(timeout, move || tool.call(&args, &task_ctx))
        .map_err(|_| ToolError::Timeout)??;
    Ok(truncate_observation(text, registry.observation_cap))
}
