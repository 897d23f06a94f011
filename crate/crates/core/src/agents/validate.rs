//! Post-wave validation and the Round-2 trigger.

use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use super::aggregate::slot_rows;
use super::{OrchestratorConfig, SubtaskRole, SubtaskSpec};
use crate::prompts::{self, fill};
use crate::query::Query;
use crate::table::{header_key, row_key, TableSchema};
use crate::workboard::{Status, Workboard};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecShortfall {
    pub id: String,
    pub partition: String,
    pub expected: f64,
    /// Unique rows in the slot; 0 for a failed worker.
    pub delivered: usize,
    pub failed: bool,
    /// Named in a `MISSING:` line by an audit worker.
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Verdict {
    pub missing_fraction: f64,
    pub expected_total: f64,
    pub delivered_total: usize,
    /// Extraction subtasks under their midpoint, failed or flagged.
    pub shortfalls: Vec<SpecShortfall>,
    pub failed: Vec<String>,
    /// Partitions audit workers reported as incomplete.
    pub flagged_partitions: Vec<String>,
    /// Share of non-NA cells per column over the delivered rows.
    pub column_coverage: Vec<(String, f64)>,
}

static MISSING_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?m)^\s*MISSING:\s*(.+?)\s*$").unwrap());

fn partition_matches(flag: &str, partition: &str) -> bool {
    let (f, p) = (header_key(flag), header_key(partition));
    !f.is_empty() && (f == p || p.starts_with(&f) || f.starts_with(&p))
}

/// Row counts, failures and coverage over all slots. The missing fraction is
/// `max(0, 1 - delivered / sum of target midpoints)`, where delivered counts
/// unique rows across slots of workers that did not fail.
pub fn validate_outputs(board: &Workboard, specs: &[SubtaskSpec], schema: &TableSchema) -> Verdict {
    let mut flagged_partitions: Vec<String> = Vec::new();
    for s in specs.iter().filter(|s| s.role.is_audit()) {
        for c in MISSING_RE.captures_iter(board.slot(&s.id).unwrap_or_default()) {
            let p = c[1].to_string();
            if !flagged_partitions.contains(&p) {
                flagged_partitions.push(p);
            }
        }
    }

    let mut seen: HashSet<Vec<String>> = HashSet::new();
    let mut filled = vec![0usize; schema.len()];
    let mut shortfalls = Vec::new();
    let mut failed = Vec::new();
    let mut expected_total = 0.0;
    for s in specs {
        expected_total += s.midpoint();
        let is_failed = board.status(&s.id) == Some(Status::Failed);
        if is_failed {
            failed.push(s.id.clone());
        }
        let mut own = HashSet::new();
        if !is_failed {
            for r in slot_rows(board.slot(&s.id).unwrap_or_default(), schema) {
                let key: Vec<String> = row_key(&r).into_iter().map(String::from).collect();
                own.insert(key.clone());
                if seen.insert(key) {
                    for (i, c) in r.iter().enumerate() {
                        filled[i] += usize::from(!c.is_na());
                    }
                }
            }
        }
        if s.role.is_audit() {
            continue;
        }
        let flagged = flagged_partitions.iter().any(|f| partition_matches(f, &s.partition));
        let delivered = own.len();
        if is_failed || (delivered as f64) < s.midpoint() || flagged {
            shortfalls.push(SpecShortfall {
                id: s.id.clone(),
                partition: s.partition.clone(),
                expected: s.midpoint(),
                delivered,
                failed: is_failed,
                flagged,
            });
        }
    }
    let delivered_total = seen.len();
    let missing_fraction = if expected_total > 0.0 { (1.0 - delivered_total as f64 / expected_total).max(0.0) } else { 0.0 };
    let column_coverage = schema
        .columns()
        .iter()
        .zip(filled)
        .map(|(c, n)| (c.name.clone(), if delivered_total == 0 { 0.0 } else { n as f64 / delivered_total as f64 }))
        .collect();
    Verdict { missing_fraction, expected_total, delivered_total, shortfalls, failed, flagged_partitions, column_coverage }
}

/// Follow-up subtasks for the shortfall partitions when the missing fraction
/// is strictly above the threshold. Empty once a Round 2 has run. New ids
/// continue after `specs`, and at most `max_workers` follow-ups are made.
pub fn trigger_round2(
    verdict: &Verdict,
    specs: &[SubtaskSpec],
    query: &Query,
    config: &OrchestratorConfig,
    round2_done: bool,
) -> Vec<SubtaskSpec> {
    if round2_done || verdict.missing_fraction <= config.round2_missing_threshold {
        return Vec::new();
    }
    let mut next = specs.len() + 1;
    let mut out = Vec::new();
    for short in verdict.shortfalls.iter().take(config.max_workers) {
        let Some(orig) = specs.iter().find(|s| s.id == short.id) else { continue };
        let got = short.delivered as u32;
        let lo = orig.target_volume[0].saturating_sub(got);
        let hi = orig.target_volume[1].saturating_sub(got).max(lo);
        out.push(SubtaskSpec {
            id: format!("t{next}"),
            instruction: fill(
                prompts::FOLLOWUP_INSTRUCTION,
                &[
                    ("query", &query.text),
                    ("partition", &orig.partition),
                    ("delivered", &short.delivered.to_string()),
                    ("expected", &format!("{}", short.expected)),
                ],
            ),
            partition: orig.partition.clone(),
            schema: orig.schema.clone(),
            target_volume: [lo, hi],
            role: SubtaskRole::FollowUp,
            round: 2,
        });
        next += 1;
    }
    out
}
