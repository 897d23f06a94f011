//! Cluster training queries by structure and turn their error reports into
//! decomposition and router skills.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::hygiene::{entity_literals, hygiene_violations, PLACEHOLDERS};
use super::verify::ErrorReport;
use super::EvolutionError;
use crate::agents::{extract_features, fallback_route, parse_router_rules, RouterRule, STRATEGY_LABELS};
use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::prompts::{self, feedback_block, fill};
use crate::skills::{strip_fence, SkillBank};

pub const OTHER_CLUSTER: &str = "other";
pub use crate::agents::ROUTER_SKILL;

/// Label per query: backend-assigned when one is given and answers with a
/// known label, else the router's structural heuristic. Queries with no
/// structural feature at all land in `other`.
pub fn cluster_queries(
    queries: &[String],
    backend: Option<&Arc<dyn GenerationBackend>>,
    clock: &Clock,
) -> BTreeMap<String, Vec<String>> {
    let mut labels: Vec<&str> = STRATEGY_LABELS.to_vec();
    labels.push(OTHER_CLUSTER);
    let mut out: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for q in queries {
        let asked = backend.and_then(|b| {
            let prompt = fill(prompts::CLUSTER, &[("labels", &labels.join(", ")), ("query", q)]);
            let reply = generate_bounded(b, GenerationRequest::new(prompt).with_clock(clock.clone())).ok()?;
            let l = reply.trim().trim_matches('`').to_string();
            labels.contains(&l.as_str()).then_some(l)
        });
        let label = asked.unwrap_or_else(|| {
            let f = extract_features(q);
            if f == Default::default() {
                OTHER_CLUSTER.to_string()
            } else {
                fallback_route(&f).to_string()
            }
        });
        let members = out.entry(label).or_default();
        if !members.contains(q) {
            members.push(q.clone());
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutput {
    pub clusters: BTreeMap<String, Vec<String>>,
    /// Decomposition skill body per cluster label.
    pub skills: BTreeMap<String, String>,
    pub router: Option<String>,
}

impl ReflectionOutput {
    pub fn is_empty(&self) -> bool {
        self.skills.is_empty() && self.router.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct ReflectOptions {
    pub attempts: u32,
    pub clock: Clock,
}

impl Default for ReflectOptions {
    fn default() -> Self {
        ReflectOptions { attempts: 3, clock: Clock::System }
    }
}

struct Profile {
    heading: &'static str,
    intro: &'static str,
    split_rule: &'static str,
    feature: &'static str,
}

fn profile(label: &str) -> Option<Profile> {
    Some(match label {
        "split-by-entity" => Profile {
            heading: "# Split-by-entity decomposition",
            intro: "When the query targets a list of named entities ({ENTITY}), split by entity name, not by time\nperiod. Each worker gets one {ENTITY} as its search keyword.",
            split_rule: "- If any {ENTITY} has >80 expected items, split further by region.",
            feature: "entity_list",
        },
        "split-by-source" => Profile {
            heading: "# Split-by-source decomposition",
            intro: "When the query enumerates records from several named sources ({SOURCE}), assign one worker per\n{SOURCE} rather than splitting along time or topic.",
            split_rule: "- For sources with >50 records, split further by year within that source.",
            feature: "multiple_sources",
        },
        "split-by-category" => Profile {
            heading: "# Split-by-category decomposition",
            intro: "When the query spans several product lines or categories ({CATEGORY}), assign one worker per\n{CATEGORY}.",
            split_rule: "- For product lines with >50 items, split further by generation.",
            feature: "multiple_categories",
        },
        "split-by-time-period" => Profile {
            heading: "# Split-by-time-period decomposition",
            intro: "When the query is bounded only by a date range ({TIME_RANGE}), split the range into consecutive\nwindows, one per worker.",
            split_rule: "- If any window has >80 expected items, split further by month.",
            feature: "date_range",
        },
        _ => return None,
    })
}

fn bullets(body: &str) -> Vec<String> {
    body.lines().map(str::trim).filter(|l| l.starts_with("- ")).map(String::from).collect()
}

/// Deterministic reflection used when no backend is configured: fixed
/// structural text per label plus rules triggered by the observed errors,
/// merged with the rules of the current skill.
fn template_skill(label: &str, reports: &[&ErrorReport], current: Option<&str>) -> Option<String> {
    let p = profile(label)?;
    let mut rules: Vec<String> = current.map(bullets).unwrap_or_default();
    let mut add = |r: &str| {
        if !rules.iter().any(|x| x == r) {
            rules.push(r.to_string());
        }
    };
    let short = reports.iter().any(|r| !r.missing_row_categories.is_empty() || r.round2 || r.utility < 1.0);
    let overloaded = reports.iter().any(|r| r.digests.iter().any(|d| !d.failure_points.is_empty()));
    if short || overloaded {
        add(p.split_rule);
    }
    if short {
        add("- Always include a gap-detection worker.");
        add("- If >10% missing after gap-detection, trigger Round 2.");
    }
    if reports.iter().any(|r| !r.low_accuracy_columns.is_empty()) {
        add("- Always assign a dedicated verification worker for {FIELD} columns that scored low.");
    }
    let mut body = format!("{}\n{}\n", p.heading, p.intro);
    if !rules.is_empty() {
        body.push_str("\nRules learned from past failures:\n");
        for r in rules {
            body.push_str(&r);
            body.push('\n');
        }
    }
    Some(body)
}

const FEATURE_ORDER: [&str; 4] = ["entity_list", "multiple_sources", "multiple_categories", "date_range"];

fn template_router(labels: &BTreeSet<String>, current: Option<&str>) -> String {
    let mut rules: Vec<RouterRule> = current.map(parse_router_rules).unwrap_or_default();
    for l in labels {
        if let Some(p) = profile(l) {
            if !rules.iter().any(|r| r.feature == p.feature) {
                rules.push(RouterRule { feature: p.feature.to_string(), label: l.clone() });
            }
        }
    }
    rules.retain(|r| r.feature != "otherwise");
    rules.sort_by_key(|r| FEATURE_ORDER.iter().position(|f| *f == r.feature).unwrap_or(FEATURE_ORDER.len()));
    let mut body = String::from(
        "# Task router\nClassify the query by structure, not topic. Apply the first rule whose feature holds:\n",
    );
    for r in &rules {
        body.push_str(&format!("- {} -> {}\n", r.feature, r.label));
    }
    if let Some(r) = rules.iter().find(|r| r.label == "split-by-time-period") {
        body.push_str(&format!("- otherwise -> {}\n", r.label));
    }
    body
}

fn error_summary(reports: &[&ErrorReport]) -> String {
    let mut s = String::new();
    for r in reports {
        s.push_str(&format!(
            "- utility {:.3}; missing: {}; low-accuracy columns: {}; anomalies: {}; round 2: {}\n",
            r.utility,
            if r.missing_row_categories.is_empty() { "none".into() } else { r.missing_row_categories.len().to_string() + " partitions" },
            r.low_accuracy_columns.iter().map(|c| format!("{} ({:.2})", c.column, c.accuracy)).collect::<Vec<_>>().join(", "),
            r.trajectory_anomalies.len(),
            r.round2,
        ));
        for d in &r.digests {
            if !d.failure_points.is_empty() {
                s.push_str(&format!("  worker {}: {}\n", d.worker_id, d.failure_points.join("; ")));
            }
        }
    }
    if s.is_empty() {
        s.push_str("(no errors recorded)");
    }
    s
}

/// Asks `backend` until a reply passes `check`, feeding back the rejection.
fn ask_until(
    backend: &Arc<dyn GenerationBackend>,
    build: impl Fn(&str) -> String,
    check: impl Fn(&str) -> Result<(), String>,
    opts: &ReflectOptions,
    what: &str,
) -> Result<String, EvolutionError> {
    let mut feedback: Option<String> = None;
    for _ in 0..opts.attempts.max(1) {
        let prompt = build(&feedback_block(feedback.as_deref()));
        match generate_bounded(backend, GenerationRequest::new(prompt).with_clock(opts.clock.clone())) {
            Ok(reply) => {
                let body = strip_fence(&reply).trim().to_string();
                match check(&body) {
                    Ok(()) => return Ok(format!("{body}\n")),
                    Err(e) => feedback = Some(e),
                }
            }
            Err(e) => feedback = Some(e.to_string()),
        }
    }
    Err(EvolutionError::ReflectionInvalid { skill: what.to_string(), reason: feedback.unwrap_or_default() })
}

fn hygiene_check(body: &str, literals: &BTreeSet<String>) -> Result<(), String> {
    if body.trim().is_empty() {
        return Err("empty skill text".into());
    }
    let v = hygiene_violations(body, literals);
    if v.is_empty() {
        Ok(())
    } else {
        Err(format!("use only the placeholders {}; found {}", PLACEHOLDERS.join(", "), v.join(", ")))
    }
}

/// One decomposition skill per cluster (the catch-all `other` excepted)
/// plus the router. Every text passes the placeholder scan against the
/// entity literals of the member queries.
pub fn reflect(
    clusters: &BTreeMap<String, Vec<String>>,
    reports: &[ErrorReport],
    strategies: &SkillBank,
    backend: Option<&Arc<dyn GenerationBackend>>,
    opts: &ReflectOptions,
) -> Result<ReflectionOutput, EvolutionError> {
    let mut out = ReflectionOutput { clusters: clusters.clone(), ..Default::default() };
    let mut all_literals = BTreeSet::new();
    for (label, members) in clusters {
        if label == OTHER_CLUSTER {
            continue;
        }
        let literals: BTreeSet<String> = members.iter().flat_map(|q| entity_literals(q)).collect();
        all_literals.extend(literals.iter().cloned());
        let member_reports: Vec<&ErrorReport> = reports.iter().filter(|r| members.contains(&r.query)).collect();
        let name = format!("decompose-{label}");
        let current = strategies.get(&name).map(|s| s.body);
        let body = match backend {
            Some(b) => {
                let queries = members.iter().map(|q| format!("- {q}")).collect::<Vec<_>>().join("\n");
                let errors = error_summary(&member_reports);
                let current_text = current.clone().unwrap_or_else(|| "(none)".into());
                ask_until(
                    b,
                    |fb| {
                        fill(
                            prompts::REFLECT_STRATEGY,
                            &[
                                ("label", label),
                                ("queries", &queries),
                                ("errors", &errors),
                                ("current", &current_text),
                                ("placeholders", &PLACEHOLDERS.join(", ")),
                                ("feedback", fb),
                            ],
                        )
                    },
                    |body| hygiene_check(body, &literals),
                    opts,
                    &name,
                )?
            }
            None => match template_skill(label, &member_reports, current.as_deref()) {
                Some(b) => b,
                None => continue,
            },
        };
        out.skills.insert(label.clone(), body);
    }
    if out.skills.is_empty() {
        return Ok(out);
    }
    let mut labels: BTreeSet<String> = out.skills.keys().cloned().collect();
    labels.extend(strategies.names().iter().filter_map(|n| n.strip_prefix("decompose-").map(String::from)));
    let current_router = strategies.get(ROUTER_SKILL).map(|s| s.body);
    let router = match backend {
        Some(b) => {
            let label_list = labels.iter().cloned().collect::<Vec<_>>().join(", ");
            let cluster_text = clusters
                .iter()
                .map(|(l, m)| format!("{l}: {} queries", m.len()))
                .collect::<Vec<_>>()
                .join("\n");
            let current_text = current_router.clone().unwrap_or_else(|| "(none)".into());
            ask_until(
                b,
                |fb| {
                    fill(
                        prompts::REFLECT_ROUTER,
                        &[
                            ("labels", &label_list),
                            ("clusters", &cluster_text),
                            ("current", &current_text),
                            ("placeholders", &PLACEHOLDERS.join(", ")),
                            ("feedback", fb),
                        ],
                    )
                },
                |body| {
                    hygiene_check(body, &all_literals)?;
                    let rules = parse_router_rules(body);
                    if rules.is_empty() {
                        return Err("no \"- feature -> label\" rule lines".into());
                    }
                    match rules.iter().find(|r| !labels.contains(&r.label)) {
                        Some(r) => Err(format!("unknown label {:?}", r.label)),
                        None => Ok(()),
                    }
                },
                opts,
                ROUTER_SKILL,
            )?
        }
        None => template_router(&labels, current_router.as_deref()),
    };
    out.router = Some(router);
    Ok(out)
}
