//! Splits a query into worker subtasks under the rules of a strategy skill.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AgentError, OrchestratorConfig, SubtaskRole, SubtaskSpec, DEFAULT_TARGET_VOLUME};
use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::prompts::{self, feedback_block, fill};
use crate::query::Query;
use crate::skills::{strip_fence, Skill};
use crate::table::TableSchema;

/// Constraints a strategy skill states in its rule bullets.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecompositionRules {
    /// Partitions expecting more rows than this must be split further.
    pub split_threshold: Option<u32>,
    /// Dimension of the further split (region, year, generation, ...).
    pub split_dimension: Option<String>,
    pub gap_detection: bool,
    pub verification: bool,
}

static SPLIT_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)>\s*(\d+).*?split\s+further\s+by\s+([a-z][a-z -]*?)(?:\s+within\b|[.,;]|$)").unwrap());
static GAP_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bgap[- ]detection\s+worker").unwrap());
static DEDICATED_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bdedicated\b.*\bworker\b").unwrap());

/// Rule bullets with wrapped continuation lines joined.
fn rule_bullets(body: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut open = false;
    for line in body.lines() {
        let t = line.trim();
        if let Some(rest) = t.strip_prefix("- ").or_else(|| t.strip_prefix("* ")) {
            out.push(rest.to_string());
            open = true;
        } else if t.is_empty() || t.starts_with('#') {
            open = false;
        } else if open {
            let last = out.last_mut().expect("open implies a bullet");
            last.push(' ');
            last.push_str(t);
        }
    }
    out
}

impl DecompositionRules {
    pub fn parse(body: &str) -> Self {
        let mut r = DecompositionRules::default();
        for b in rule_bullets(body) {
            if let Some(c) = SPLIT_RE.captures(&b) {
                r.split_threshold = c[1].parse().ok();
                r.split_dimension = Some(c[2].trim().to_string());
            }
            if GAP_RE.is_match(&b) {
                r.gap_detection = true;
            } else if DEDICATED_RE.is_match(&b) {
                r.verification = true;
            }
        }
        r
    }

    fn audit_count(&self) -> usize {
        usize::from(self.gap_detection) + usize::from(self.verification)
    }
}

#[derive(Debug, Deserialize)]
struct Plan {
    partitions: Vec<PlanPartition>,
    #[serde(default)]
    columns: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
struct PlanPartition {
    name: String,
    #[serde(default)]
    descriptor: Option<String>,
    #[serde(default)]
    expected: Option<u32>,
    #[serde(default)]
    target: Option<[u32; 2]>,
    #[serde(default)]
    splits: Vec<PlanSplit>,
}

#[derive(Debug, Deserialize)]
struct PlanSplit {
    name: String,
    #[serde(default)]
    target: Option<[u32; 2]>,
}

fn check_target(t: Option<[u32; 2]>, what: &str) -> Result<[u32; 2], String> {
    match t {
        None => Ok(DEFAULT_TARGET_VOLUME),
        Some([lo, hi]) if lo <= hi => Ok([lo, hi]),
        Some(t) => Err(format!("target {t:?} of {what:?} has lo > hi")),
    }
}

fn json_object(reply: &str) -> &str {
    let s = strip_fence(reply);
    match (s.find('{'), s.rfind('}')) {
        (Some(a), Some(b)) if a < b => &s[a..=b],
        _ => s,
    }
}

fn extract_spec(query: &Query, partition: &str, descriptor: &str, schema: &TableSchema, target: [u32; 2]) -> SubtaskSpec {
    SubtaskSpec {
        id: String::new(),
        instruction: fill(prompts::EXTRACT_INSTRUCTION, &[("query", &query.text), ("partition", descriptor)]),
        partition: partition.to_string(),
        schema: schema.clone(),
        target_volume: target,
        role: SubtaskRole::Extract,
        round: 1,
    }
}

fn audit_spec(query: &Query, role: SubtaskRole, schema: &TableSchema) -> SubtaskSpec {
    let (template, partition) = match role {
        SubtaskRole::GapDetection => (prompts::GAP_INSTRUCTION, "gap detection and completeness check"),
        _ => (prompts::VERIFY_INSTRUCTION, "cross-source verification"),
    };
    SubtaskSpec {
        id: String::new(),
        instruction: fill(template, &[("query", &query.text)]),
        partition: partition.to_string(),
        schema: schema.clone(),
        target_volume: [0, 0],
        role,
        round: 1,
    }
}

fn build_specs(
    query: &Query,
    plan: Plan,
    rules: &DecompositionRules,
    max_workers: usize,
) -> Result<Vec<SubtaskSpec>, String> {
    let schema = match query.schema() {
        Some(s) => s.map_err(|e| e.to_string())?,
        None => match plan.columns.as_deref() {
            Some(c) if !c.is_empty() => TableSchema::from_names(c).map_err(|e| e.to_string())?,
            _ => return Err("the query names no columns and the plan gives none".into()),
        },
    };
    if plan.partitions.is_empty() {
        return Err("the plan has no partitions".into());
    }
    let mut specs = Vec::new();
    for p in &plan.partitions {
        let descriptor = p.descriptor.as_deref().unwrap_or(&p.name);
        let oversized = matches!((rules.split_threshold, p.expected), (Some(t), Some(e)) if e > t);
        if oversized && p.splits.len() < 2 {
            return Err(format!(
                "partition {:?} expects {} rows, above {}; split it further by {}",
                p.name,
                p.expected.unwrap_or_default(),
                rules.split_threshold.unwrap_or_default(),
                rules.split_dimension.as_deref().unwrap_or("a sub-dimension"),
            ));
        }
        if p.splits.is_empty() {
            specs.push(extract_spec(query, &p.name, descriptor, &schema, check_target(p.target, &p.name)?));
        } else {
            for s in &p.splits {
                let name = format!("{}: {}", p.name, s.name);
                let desc = format!("{descriptor}: {}", s.name);
                specs.push(extract_spec(query, &name, &desc, &schema, check_target(s.target, &name)?));
            }
        }
    }
    if rules.gap_detection {
        specs.push(audit_spec(query, SubtaskRole::GapDetection, &schema));
    }
    if rules.verification {
        specs.push(audit_spec(query, SubtaskRole::Verification, &schema));
    }
    if specs.len() > max_workers {
        return Err(format!(
            "{} subtasks exceed the {max_workers}-worker ceiling ({} of them audits); merge partitions",
            specs.len(),
            rules.audit_count()
        ));
    }
    Ok(specs)
}

fn number(mut specs: Vec<SubtaskSpec>) -> Vec<SubtaskSpec> {
    for (i, s) in specs.iter_mut().enumerate() {
        s.id = format!("t{}", i + 1);
    }
    specs
}

/// Partitions `query` following `strategy`. Without a backend the whole query
/// becomes one subtask.
pub fn decompose(
    query: &Query,
    label: &str,
    strategy: &Skill,
    backend: Option<&Arc<dyn GenerationBackend>>,
    config: &OrchestratorConfig,
    clock: &Clock,
) -> Result<Vec<SubtaskSpec>, AgentError> {
    let rules = DecompositionRules::parse(&strategy.body);
    let Some(backend) = backend else {
        let schema = match query.schema() {
            Some(s) => s?,
            None => return Err(AgentError::DecompositionInvalid("the query names no columns".into())),
        };
        return Ok(number(vec![extract_spec(query, "entire query", "the entire query", &schema, DEFAULT_TARGET_VOLUME)]));
    };
    let mut feedback: Option<String> = None;
    for _ in 0..config.decompose_attempts.max(1) {
        let prompt = fill(
            prompts::DECOMPOSE,
            &[
                ("label", label),
                ("max_workers", &config.max_workers.to_string()),
                ("strategy", &strategy.body),
                ("query", &query.text),
                ("feedback", &feedback_block(feedback.as_deref())),
            ],
        );
        let reply = match generate_bounded(backend, GenerationRequest::new(prompt).with_clock(clock.clone())) {
            Ok(r) => r,
            Err(e) => {
                feedback = Some(e.to_string());
                continue;
            }
        };
        let plan: Plan = match serde_json::from_str(json_object(&reply)) {
            Ok(p) => p,
            Err(e) => {
                feedback = Some(format!("reply is not the requested JSON: {e}"));
                continue;
            }
        };
        match build_specs(query, plan, &rules, config.max_workers) {
            Ok(specs) => return Ok(number(specs)),
            Err(e) => feedback = Some(e),
        }
    }
    Err(AgentError::DecompositionInvalid(feedback.unwrap_or_else(|| "no attempts made".into())))
}
