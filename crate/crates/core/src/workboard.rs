//! The per-episode shared workboard: a Markdown document with a task
//! checklist, a shared context block and one tagged result slot per subtask.
//!
//! Writers serialise through an exclusive lock on `<board>.lock` and commit by
//! write-temp-then-rename; readers never take the lock and always observe the
//! last committed version.
//!
//! ```text
//! # Workboard
//!
//! ## Task Checklist
//! - [ ] t1: Fearless Tour (status: pending)
//!
//! ## Shared Context
//! ...
//!
//! ## Worker Results
//! <t1_result>
//! ...
//! </t1_result>
//! ```

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lock::{self, atomic_write, LockError, DEFAULT_LOCK_TIMEOUT};

#[derive(Debug, Error)]
pub enum WorkboardError {
    #[error("a workboard already exists at {0}")]
    PathExists(String),
    #[error("a workboard needs at least one subtask")]
    NoSubtasks,
    #[error("duplicate subtask id {0:?}")]
    DuplicateId(String),
    #[error("invalid subtask id {0:?}")]
    InvalidId(String),
    #[error("malformed workboard: {0}")]
    MalformedBoard(String),
    #[error("{0:?} owns no slot on this board")]
    SlotNotOwned(String),
    #[error("{actor} may not change the status of {subtask}")]
    NotAuthorized { actor: String, subtask: String },
    #[error("payload for {0:?} contains a result tag")]
    PayloadContainsTag(String),
    #[error("lock wait exceeded {0:?}")]
    LockTimeout(Duration),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<LockError> for WorkboardError {
    fn from(e: LockError) -> Self {
        match e {
            LockError::Timeout(d, _) => WorkboardError::LockTimeout(d),
            LockError::Io(e) => WorkboardError::Io(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pending,
    Running,
    Done,
    Failed,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        matches!(self, Status::Done | Status::Failed)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Pending => "pending",
            Status::Running => "running",
            Status::Done => "done",
            Status::Failed => "failed",
        })
    }
}

impl FromStr for Status {
    type Err = WorkboardError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "pending" => Status::Pending,
            "running" => Status::Running,
            "done" => Status::Done,
            "failed" => Status::Failed,
            other => return Err(WorkboardError::MalformedBoard(format!("unknown status {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistEntry {
    pub id: String,
    pub summary: String,
    pub status: Status,
}

/// Who is asking to mutate the board.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Actor {
    Orchestrator,
    Worker(String),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Orchestrator => f.write_str("orchestrator"),
            Actor::Worker(id) => write!(f, "worker {id}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WriteMode {
    Append,
    Replace,
}

/// One worker's write for a merge step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Contribution {
    pub slot: String,
    pub payload: String,
    pub mode: WriteMode,
}

/// New subtask for [`init_workboard`] or [`append_subtasks`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NewSubtask {
    pub id: String,
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Workboard {
    pub checklist: Vec<ChecklistEntry>,
    pub shared_context: String,
    /// Slot contents, in checklist order.
    slots: Vec<String>,
}

static ID_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[A-Za-z0-9][A-Za-z0-9_-]*$").unwrap());
static LINE_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^- \[( |x)\] ([A-Za-z0-9][A-Za-z0-9_-]*): (.*) \(status: ([a-z]+)\)$").unwrap()
});
static TAG_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"</?[A-Za-z0-9_-]+_result>").unwrap());

const HEAD: &str = "# Workboard\n\n## Task Checklist\n";
const CONTEXT_HEAD: &str = "\n## Shared Context\n";
const RESULTS_HEAD: &str = "\n## Worker Results\n";

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Workboard {
    pub fn new(subtasks: &[NewSubtask], context: &str) -> Result<Self, WorkboardError> {
        if subtasks.is_empty() {
            return Err(WorkboardError::NoSubtasks);
        }
        if TAG_RE.is_match(context) {
            return Err(WorkboardError::PayloadContainsTag("shared context".into()));
        }
        let mut board = Workboard {
            checklist: Vec::new(),
            shared_context: context.to_string(),
            slots: Vec::new(),
        };
        board.add_subtasks(subtasks)?;
        Ok(board)
    }

    fn add_subtasks(&mut self, subtasks: &[NewSubtask]) -> Result<(), WorkboardError> {
        let mut ids: BTreeSet<String> = self.checklist.iter().map(|e| e.id.clone()).collect();
        for st in subtasks {
            if !ID_RE.is_match(&st.id) {
                return Err(WorkboardError::InvalidId(st.id.clone()));
            }
            if !ids.insert(st.id.clone()) {
                return Err(WorkboardError::DuplicateId(st.id.clone()));
            }
        }
        for st in subtasks {
            self.checklist.push(ChecklistEntry {
                id: st.id.clone(),
                summary: one_line(&st.summary),
                status: Status::Pending,
            });
            self.slots.push(String::new());
        }
        Ok(())
    }

    fn index_of(&self, id: &str) -> Option<usize> {
        self.checklist.iter().position(|e| e.id == id)
    }

    pub fn slot(&self, id: &str) -> Option<&str> {
        self.index_of(id).map(|i| self.slots[i].as_str())
    }

    pub fn slots(&self) -> impl Iterator<Item = (&str, &str)> {
        self.checklist.iter().zip(&self.slots).map(|(e, s)| (e.id.as_str(), s.as_str()))
    }

    pub fn status(&self, id: &str) -> Option<Status> {
        self.index_of(id).map(|i| self.checklist[i].status)
    }

    pub fn apply(&mut self, c: &Contribution) -> Result<(), WorkboardError> {
        let i = self.index_of(&c.slot).ok_or_else(|| WorkboardError::SlotNotOwned(c.slot.clone()))?;
        if TAG_RE.is_match(&c.payload) {
            return Err(WorkboardError::PayloadContainsTag(c.slot.clone()));
        }
        let slot = &mut self.slots[i];
        match c.mode {
            WriteMode::Replace => *slot = c.payload.clone(),
            WriteMode::Append if slot.is_empty() => *slot = c.payload.clone(),
            WriteMode::Append => {
                slot.push('\n');
                slot.push_str(&c.payload);
            }
        }
        Ok(())
    }

    pub fn set_status(&mut self, id: &str, status: Status, actor: &Actor) -> Result<(), WorkboardError> {
        let i = self.index_of(id).ok_or_else(|| WorkboardError::SlotNotOwned(id.to_string()))?;
        if let Actor::Worker(w) = actor {
            if w != id {
                return Err(WorkboardError::NotAuthorized { actor: actor.to_string(), subtask: id.into() });
            }
        }
        self.checklist[i].status = status;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from(HEAD);
        for e in &self.checklist {
            let mark = if e.status == Status::Done { 'x' } else { ' ' };
            out.push_str(&format!("- [{mark}] {}: {} (status: {})\n", e.id, e.summary, e.status));
        }
        out.push_str(CONTEXT_HEAD);
        out.push_str(&self.shared_context);
        out.push('\n');
        out.push_str(RESULTS_HEAD);
        for (e, content) in self.checklist.iter().zip(&self.slots) {
            out.push_str(&format!("<{0}_result>\n{1}\n</{0}_result>\n", e.id, content));
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, WorkboardError> {
        let bad = |m: &str| WorkboardError::MalformedBoard(m.to_string());
        let rest = text.strip_prefix(HEAD).ok_or_else(|| bad("missing checklist heading"))?;

        let mut checklist = Vec::new();
        let mut rest = rest;
        while rest.starts_with("- [") {
            let end = rest.find('\n').ok_or_else(|| bad("unterminated checklist line"))?;
            let line = &rest[..end];
            let caps = LINE_RE.captures(line).ok_or_else(|| bad(&format!("bad checklist line {line:?}")))?;
            checklist.push(ChecklistEntry {
                id: caps[2].to_string(),
                summary: caps[3].to_string(),
                status: caps[4].parse()?,
            });
            rest = &rest[end + 1..];
        }
        if checklist.is_empty() {
            return Err(bad("empty checklist"));
        }
        let rest = rest.strip_prefix(CONTEXT_HEAD).ok_or_else(|| bad("missing shared context heading"))?;

        // Context is free text, so anchor on the results heading followed by
        // the first slot's open tag.
        let first_open = format!("\n{RESULTS_HEAD}<{}_result>\n", checklist[0].id);
        let ctx_end = rest.find(&first_open).ok_or_else(|| bad("missing results section"))?;
        let shared_context = rest[..ctx_end].to_string();
        let mut rest = &rest[ctx_end + 1 + RESULTS_HEAD.len()..];

        let mut slots = Vec::with_capacity(checklist.len());
        for e in &checklist {
            let open = format!("<{}_result>\n", e.id);
            let close = format!("\n</{}_result>\n", e.id);
            let body = rest.strip_prefix(open.as_str()).ok_or_else(|| bad(&format!("missing open tag for {}", e.id)))?;
            let end = body.find(&close).ok_or_else(|| bad(&format!("missing close tag for {}", e.id)))?;
            slots.push(body[..end].to_string());
            rest = &body[end + close.len()..];
        }
        if !rest.is_empty() {
            return Err(bad("trailing content after result slots"));
        }
        Ok(Workboard { checklist, shared_context, slots })
    }

    pub fn is_converged(&self) -> bool {
        is_converged(self)
    }
}

pub fn is_converged(board: &Workboard) -> bool {
    board.checklist.iter().all(|e| e.status.is_terminal())
}

/// Applies disjoint per-slot contributions; the result does not depend on order.
pub fn merge_step(board: &Workboard, contributions: &[Contribution]) -> Result<Workboard, WorkboardError> {
    let mut seen = BTreeSet::new();
    for c in contributions {
        if !seen.insert(c.slot.as_str()) {
            return Err(WorkboardError::MalformedBoard(format!("two contributions target {}", c.slot)));
        }
    }
    let mut next = board.clone();
    for c in contributions {
        next.apply(c)?;
    }
    Ok(next)
}

/// Handle on a board file.
#[derive(Debug, Clone)]
pub struct BoardFile {
    path: std::path::PathBuf,
    lock_timeout: Duration,
}

impl BoardFile {
    pub fn new(path: impl Into<std::path::PathBuf>) -> Self {
        BoardFile { path: path.into(), lock_timeout: DEFAULT_LOCK_TIMEOUT }
    }

    pub fn with_lock_timeout(mut self, t: Duration) -> Self {
        self.lock_timeout = t;
        self
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn init(&self, subtasks: &[NewSubtask], context: &str) -> Result<Workboard, WorkboardError> {
        let board = Workboard::new(subtasks, context)?;
        let _g = lock::lock_exclusive(&lock::sidecar_path(&self.path), self.lock_timeout)?;
        if self.path.exists() {
            return Err(WorkboardError::PathExists(self.path.display().to_string()));
        }
        atomic_write(&self.path, board.render().as_bytes())?;
        Ok(board)
    }

    pub fn read(&self) -> Result<Workboard, WorkboardError> {
        Workboard::parse(&std::fs::read_to_string(&self.path)?)
    }

    /// Read-modify-commit under the exclusive lock.
    pub fn update<F>(&self, f: F) -> Result<Workboard, WorkboardError>
    where
        F: FnOnce(&mut Workboard) -> Result<(), WorkboardError>,
    {
        let _g = lock::lock_exclusive(&lock::sidecar_path(&self.path), self.lock_timeout)?;
        let mut board = self.read()?;
        f(&mut board)?;
        atomic_write(&self.path, board.render().as_bytes())?;
        Ok(board)
    }

    pub fn edit_slot(&self, writer: &str, payload: &str, mode: WriteMode) -> Result<Workboard, WorkboardError> {
        let c = Contribution { slot: writer.to_string(), payload: payload.to_string(), mode };
        self.update(|b| b.apply(&c))
    }

    pub fn set_status(&self, id: &str, status: Status, actor: &Actor) -> Result<Workboard, WorkboardError> {
        self.update(|b| b.set_status(id, status, actor))
    }

    /// Orchestrator-only: extends the checklist and results with new slots.
    pub fn append_subtasks(&self, subtasks: &[NewSubtask]) -> Result<Workboard, WorkboardError> {
        self.update(|b| b.add_subtasks(subtasks))
    }
}

pub fn init_workboard(subtasks: &[NewSubtask], context: &str, path: &Path) -> Result<Workboard, WorkboardError> {
    BoardFile::new(path).init(subtasks, context)
}

pub fn read_workboard(path: &Path) -> Result<Workboard, WorkboardError> {
    BoardFile::new(path).read()
}

pub fn edit_slot(path: &Path, writer: &str, payload: &str, mode: WriteMode) -> Result<Workboard, WorkboardError> {
    BoardFile::new(path).edit_slot(writer, payload, mode)
}

pub fn set_status(path: &Path, id: &str, status: Status, actor: &Actor) -> Result<Workboard, WorkboardError> {
    BoardFile::new(path).set_status(id, status, actor)
}
