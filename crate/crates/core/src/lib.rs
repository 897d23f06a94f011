//! Runtime for building large web-sourced tables with a bi-level team of agents.
//!
//! An orchestrator decomposes a query into subtasks, workers resolve them in
//! parallel against a web environment and coordinate through a shared
//! [`workboard`], and a run/verify/reflect loop ([`evolution`]) grows the
//! persistent [`skills`] banks. The [`scoring`] module is both the evaluation
//! harness and the training utility.

pub mod agents;
pub mod backend;
pub mod clock;
pub mod evolution;
pub mod lock;
pub mod prompts;
pub mod query;
pub mod scoring;
pub mod skills;
pub mod table;
pub mod tools;
pub mod trajectory;
pub mod workboard;

pub use query::Query;
pub use table::{Cell, Column, ColumnKind, Table, TableError, TableSchema};
pub use trajectory::{Anomaly, AnomalyKind, StepKind, Trajectory, TrajectoryStep};

/// Missing-value sentinel. Exact and case-sensitive.
pub const NA: &str = "NA";

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}
