//! Per-worker action/observation history, persisted as JSONL (one object per step).

use std::io::{self, BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepKind {
    ToolCall,
    Response,
}

/// One JSONL line. Field names are part of the on-disk format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub index: u32,
    pub ts: u64,
    pub kind: StepKind,
    pub tool: Option<String>,
    pub args: Option<serde_json::Value>,
    pub obs_digest: Option<String>,
    pub latency_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyKind {
    ContextTruncation,
    ToolTimeout,
    GenerationTimeout,
    /// The worker hit its step bound without responding.
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Anomaly {
    pub kind: AnomalyKind,
    /// Index of the step the anomaly was observed at.
    pub step: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub worker_id: String,
    pub steps: Vec<TrajectoryStep>,
    pub anomalies: Vec<Anomaly>,
}

impl Trajectory {
    pub fn new(worker_id: impl Into<String>) -> Self {
        Trajectory { worker_id: worker_id.into(), ..Default::default() }
    }

    pub fn next_index(&self) -> u32 {
        self.steps.last().map_or(0, |s| s.index + 1)
    }

    pub fn push(&mut self, step: TrajectoryStep) {
        debug_assert!(self.steps.last().is_none_or(|s| s.index < step.index));
        self.steps.push(step);
    }

    pub fn record_anomaly(&mut self, kind: AnomalyKind, step: u32) {
        self.anomalies.push(Anomaly { kind, step });
    }

    pub fn responded(&self) -> bool {
        self.steps.last().is_some_and(|s| s.kind == StepKind::Response)
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> io::Result<()> {
        for step in &self.steps {
            serde_json::to_writer(&mut w, step)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf)?;
        std::fs::write(path, buf)
    }

    /// Reads steps back; anomalies live in the run report, not the JSONL.
    pub fn read_jsonl<R: BufRead>(worker_id: &str, r: R) -> io::Result<Self> {
        let mut t = Trajectory::new(worker_id);
        for line in r.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let step: TrajectoryStep =
                serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            t.steps.push(step);
        }
        Ok(t)
    }

    pub fn load(worker_id: &str, path: &Path) -> io::Result<Self> {
        Self::read_jsonl(worker_id, io::BufReader::new(std::fs::File::open(path)?))
    }
}
