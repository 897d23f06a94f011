//! Appending a reflection to the strategy bank and execution advice to the
//! worker bank.

use serde::Serialize;

use super::hygiene::entity_literals;
use super::reflect::{ReflectionOutput, ROUTER_SKILL};
use super::verify::ErrorReport;
use super::EvolutionError;
use crate::skills::{Skill, SkillBank, SkillId};

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Consolidation {
    pub strategy_skills: Vec<SkillId>,
    pub worker_skills: Vec<SkillId>,
}

fn next(bank: &SkillBank, skill: Skill) -> Result<SkillId, EvolutionError> {
    let v = bank.latest_version(&skill.name).unwrap_or(0) + 1;
    let s = bank.append(skill.with_version(v).created_by("reflect"))?;
    Ok(SkillId { name: s.name.clone(), version: s.version, sha256: crate::sha256_hex(s.render().as_bytes()) })
}

fn host(url: &str) -> Option<&str> {
    let rest = url.split_once("://").map_or(url, |(_, r)| r);
    let h = rest.split(['/', '?', '#']).next()?;
    (!h.is_empty()).then_some(h.trim_start_matches("www."))
}

/// Replaces the entity literals of `query` inside `text` by `{ENTITY}`.
fn abstract_query(text: &str, query: &str) -> String {
    let lits = entity_literals(query);
    let mut out: Vec<&str> = Vec::new();
    for w in text.split_whitespace() {
        let bare = w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase();
        if lits.contains(&bare) {
            if out.last() != Some(&"{ENTITY}") {
                out.push("{ENTITY}");
            }
        } else {
            out.push(w);
        }
    }
    out.join(" ")
}

/// Execution advice from digests that delivered rows, plus format and
/// anomaly notes. Failed patterns are left out.
pub fn advice_body(label: &str, report: &ErrorReport) -> String {
    let mut queries: Vec<String> = Vec::new();
    let mut sources: Vec<String> = Vec::new();
    for d in report.digests.iter().filter(|d| d.rows_delivered > 0) {
        for q in &d.queries_issued {
            let a = abstract_query(q, &report.query);
            if !queries.contains(&a) {
                queries.push(a);
            }
        }
        for u in &d.sources {
            if let Some(h) = host(u) {
                if !sources.iter().any(|s| s == h) {
                    sources.push(h.to_string());
                }
            }
        }
    }
    let mut body = format!("# Execution advice for {label} subtasks\n");
    if !queries.is_empty() {
        body.push_str("\nSearch formulations that delivered rows:\n");
        for q in &queries {
            body.push_str(&format!("- {q}\n"));
        }
    }
    if !sources.is_empty() {
        body.push_str("\nSources that delivered rows:\n");
        for s in &sources {
            body.push_str(&format!("- {s}\n"));
        }
    }
    body.push_str("\nFormat conventions:\n- Write \"NA\" for any cell you cannot find.\n- Keep exactly the requested columns, in order.\n");
    for c in &report.low_accuracy_columns {
        body.push_str(&format!("- Column \"{}\" scored {:.2}; copy its values verbatim from the source.\n", c.column, c.accuracy));
    }
    let mut kinds: Vec<String> = report.trajectory_anomalies.iter().map(|a| format!("{:?}", a.kind)).collect();
    kinds.sort();
    kinds.dedup();
    if !kinds.is_empty() {
        body.push_str(&format!(
            "\nAvoid:\n- Patterns that caused {} last time; prefer narrower searches and shorter pages.\n",
            kinds.join(", ")
        ));
    }
    body
}

/// Appends every reflected skill and, when `workers` is given, one advice
/// skill. An empty reflection changes nothing.
pub fn consolidate(
    strategies: &SkillBank,
    workers: Option<&SkillBank>,
    reflection: &ReflectionOutput,
    report: &ErrorReport,
) -> Result<Consolidation, EvolutionError> {
    let mut c = Consolidation::default();
    if reflection.is_empty() {
        return Ok(c);
    }
    for (label, body) in &reflection.skills {
        let s = Skill::knowledge(format!("decompose-{label}"), format!("Decomposition rules for {label} queries"), body.clone());
        c.strategy_skills.push(next(strategies, s)?);
    }
    if let Some(router) = &reflection.router {
        let s = Skill::knowledge(ROUTER_SKILL, "Maps structural query features to decomposition strategies", router.clone());
        c.strategy_skills.push(next(strategies, s)?);
    }
    if let Some(wb) = workers {
        let label = report.strategy.clone().or_else(|| reflection.skills.keys().next().cloned()).unwrap_or_else(|| "general".into());
        let s = Skill::knowledge(
            format!("advice-{label}"),
            format!("Search and format advice for {label} subtasks"),
            advice_body(&label, report),
        );
        c.worker_skills.push(next(wb, s)?);
    }
    Ok(c)
}
