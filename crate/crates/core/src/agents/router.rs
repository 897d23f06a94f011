//! Query classification into a decomposition strategy label.

use std::sync::{Arc, LazyLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::AgentError;
use crate::backend::{generate_bounded, GenerationBackend, GenerationRequest};
use crate::clock::Clock;
use crate::prompts::{self, fill};
use crate::query::Query;
use crate::skills::SkillBank;

pub const STRATEGY_LABELS: [&str; 4] = ["split-by-entity", "split-by-source", "split-by-category", "split-by-time-period"];
pub const ROUTER_SKILL: &str = "task-router";

/// Structural properties the router keys on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryFeatures {
    /// Asks for a list of named entities (tours, albums, athletes, ...).
    pub entity_list: bool,
    /// Names two or more source organisations.
    pub multiple_sources: bool,
    /// Spans several product or category lines.
    pub multiple_categories: bool,
    /// Bounded by a date range.
    pub date_range: bool,
}

impl QueryFeatures {
    pub fn get(&self, name: &str) -> Option<bool> {
        Some(match name {
            "entity_list" => self.entity_list,
            "multiple_sources" => self.multiple_sources,
            "multiple_categories" => self.multiple_categories,
            "date_range" => self.date_range,
            "otherwise" | "default" => true,
            _ => return None,
        })
    }
}

static ENTITY_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(tours|albums|singles|athletes|players|teams|clubs|brands|films|movies|books|novels|artists|bands|drivers|coaches|members)\b",
    )
    .unwrap()
});
static SOURCE_NAMES_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"\b(?:from|by)\s+(?:the\s+)?[A-Z][\w.&-]*(?:\s+[A-Z][\w.&-]*)*(?:\s+(?:team|lab|labs|group))?\s+and\s+(?:the\s+)?[A-Z]")
        .unwrap()
});
static SOURCE_WORDS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(organisations|organizations|publishers|repositories|both sources)\b").unwrap());
static CATEGORY_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(processors|cpus|gpus|chips|products|product lines|models|devices|phones|smartphones|cars|vehicles|categories|laptops)\b",
    )
    .unwrap()
});
static YEAR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(?:19|20)\d{2}\b").unwrap());
static RANGE_WORDS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\b(between|from)\b.+\b(to|and|until|through)\b").unwrap());
static COLUMNS_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bcolumns?\s*:").unwrap());
static RULE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?m)^\s*[-*]\s*`?([a-z_]+)`?\s*->\s*`?([a-z][a-z-]*)`?\s*$").unwrap());

/// Features of the request text, ignoring any trailing column list.
pub fn extract_features(text: &str) -> QueryFeatures {
    let body = match COLUMNS_TAIL_RE.find(text) {
        Some(m) => &text[..m.start()],
        None => text,
    };
    QueryFeatures {
        entity_list: ENTITY_RE.is_match(body),
        multiple_sources: SOURCE_NAMES_RE.is_match(body) || SOURCE_WORDS_RE.is_match(body),
        multiple_categories: CATEGORY_RE.is_match(body),
        date_range: YEAR_RE.find_iter(body).count() >= 2 || (YEAR_RE.is_match(body) && RANGE_WORDS_RE.is_match(body)),
    }
}

/// Structural heuristic used when no learned router decides:
/// entity list, then named sources, then categories, else time period.
pub fn fallback_route(f: &QueryFeatures) -> &'static str {
    if f.entity_list {
        "split-by-entity"
    } else if f.multiple_sources {
        "split-by-source"
    } else if f.multiple_categories {
        "split-by-category"
    } else {
        "split-by-time-period"
    }
}

/// `- feature -> label` line in a router skill.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouterRule {
    pub feature: String,
    pub label: String,
}

pub fn parse_router_rules(body: &str) -> Vec<RouterRule> {
    RULE_RE
        .captures_iter(body)
        .map(|c| RouterRule { feature: c[1].to_string(), label: c[2].to_string() })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteSource {
    /// The router skill was applied by a backend.
    RouterBackend,
    /// The router skill's rule lines were applied directly.
    RouterRules,
    Fallback,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RouteDecision {
    pub label: String,
    pub via: RouteSource,
    pub features: QueryFeatures,
}

/// Labels with a `decompose-{label}` skill in `bank`, plus the standard four.
pub fn known_labels(bank: &SkillBank) -> Vec<String> {
    let mut labels: Vec<String> = STRATEGY_LABELS.iter().map(|s| s.to_string()).collect();
    for name in bank.names() {
        if let Some(l) = name.strip_prefix("decompose-") {
            if !labels.iter().any(|x| x == l) {
                labels.push(l.to_string());
            }
        }
    }
    labels
}

pub fn route_task(
    query: &Query,
    bank: &SkillBank,
    backend: Option<&Arc<dyn GenerationBackend>>,
    fallback: bool,
    clock: &Clock,
) -> Result<RouteDecision, AgentError> {
    bank.refresh()?;
    let features = extract_features(&query.text);
    let labels = known_labels(bank);
    if let Some(router) = bank.get(ROUTER_SKILL) {
        if let Some(b) = backend {
            let prompt = fill(
                prompts::ROUTE,
                &[("labels", &labels.join(", ")), ("router", &router.body), ("query", &query.text)],
            );
            match generate_bounded(b, GenerationRequest::new(prompt).with_clock(clock.clone())) {
                Ok(reply) => {
                    let label = reply.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("").trim_matches('`');
                    if labels.iter().any(|l| l == label) {
                        return Ok(RouteDecision { label: label.to_string(), via: RouteSource::RouterBackend, features });
                    }
                    log::warn!("router backend answered unknown label {label:?}; applying rule lines");
                }
                Err(e) => log::warn!("router backend failed: {e}; applying rule lines"),
            }
        }
        for rule in parse_router_rules(&router.body) {
            if features.get(&rule.feature) == Some(true) && labels.contains(&rule.label) {
                return Ok(RouteDecision { label: rule.label, via: RouteSource::RouterRules, features });
            }
        }
    }
    if fallback {
        return Ok(RouteDecision { label: fallback_route(&features).to_string(), via: RouteSource::Fallback, features });
    }
    Err(AgentError::NoStrategy)
}
