use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::url::normalize_url;
use crate::table::{Cell, ColumnKind};
use crate::NA;

/// Free-text equivalence oracle, usually backed by a generation backend.
pub trait SemanticJudge: Send + Sync {
    /// `None` when the judge could not decide; callers fall back to string equality.
    fn judge(&self, pred: &str, gold: &str) -> Option<bool>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TextNormalization {
    pub case_fold: bool,
    pub collapse_whitespace: bool,
    pub strip_terminal_punctuation: bool,
}

impl Default for TextNormalization {
    fn default() -> Self {
        TextNormalization { case_fold: true, collapse_whitespace: true, strip_terminal_punctuation: true }
    }
}

#[derive(Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComparatorConfig {
    pub rel_tol: f64,
    pub abs_floor: f64,
    pub text: TextNormalization,
    #[serde(skip)]
    pub judge: Option<Arc<dyn SemanticJudge>>,
}

impl Default for ComparatorConfig {
    fn default() -> Self {
        ComparatorConfig { rel_tol: 1e-4, abs_floor: 1e-9, text: TextNormalization::default(), judge: None }
    }
}

impl fmt::Debug for ComparatorConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ComparatorConfig")
            .field("rel_tol", &self.rel_tol)
            .field("abs_floor", &self.abs_floor)
            .field("text", &self.text)
            .field("judge", &self.judge.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompareError {
    #[error("cannot parse {0:?} as a number")]
    ParseFailure(String),
}

pub fn normalize_text(s: &str, n: &TextNormalization) -> String {
    let mut out = if n.collapse_whitespace {
        s.split_whitespace().collect::<Vec<_>>().join(" ")
    } else {
        s.trim().to_string()
    };
    if n.case_fold {
        out = out.to_lowercase();
    }
    if n.strip_terminal_punctuation {
        let trimmed = out.trim_end_matches(['.', ',', ';', ':', '!', '?', '。', '，']).trim_end();
        out.truncate(trimmed.len());
    }
    out
}

/// Parses a web-sourced number: currency prefix, thousands separators and a
/// trailing unit token are ignored.
pub fn parse_number(raw: &str) -> Option<f64> {
    let s = raw.trim().trim_start_matches(['$', '€', '£', '¥', '~', '≈']);
    let s = match s.split_once(char::is_whitespace) {
        Some((num, unit)) if unit.split_whitespace().count() == 1 => num,
        Some(_) => return None,
        None => s,
    };
    let end = s
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_ascii_digit() || *c == '.')
        .map(|(i, c)| i + c.len_utf8())?;
    let (num, suffix) = s.split_at(end);
    if !suffix.chars().all(|c| c.is_alphabetic() || c == '%') {
        return None;
    }
    let cleaned: String = num.chars().filter(|c| !matches!(c, ',' | '_' | '\u{2009}' | '\'')).collect();
    cleaned.parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn numbers_match(a: f64, b: f64, cfg: &ComparatorConfig) -> bool {
    (a - b).abs() <= cfg.abs_floor.max(cfg.rel_tol * a.abs().max(b.abs()))
}

pub fn try_compare_cell(pred: &Cell, gold: &Cell, cfg: &ComparatorConfig) -> Result<bool, CompareError> {
    let (p, g) = (pred.raw.trim(), gold.raw.trim());
    if p == NA || g == NA {
        return Ok(p == g);
    }
    Ok(match gold.kind {
        ColumnKind::Categorical | ColumnKind::Date => normalize_text(p, &cfg.text) == normalize_text(g, &cfg.text),
        ColumnKind::Numeric => {
            let a = parse_number(p).ok_or_else(|| CompareError::ParseFailure(p.to_string()))?;
            let b = parse_number(g).ok_or_else(|| CompareError::ParseFailure(g.to_string()))?;
            numbers_match(a, b, cfg)
        }
        ColumnKind::Url => normalize_url(p) == normalize_url(g),
        ColumnKind::Text => {
            let exact = normalize_text(p, &cfg.text) == normalize_text(g, &cfg.text);
            match &cfg.judge {
                Some(j) if !exact => j.judge(p, g).unwrap_or(false),
                _ => exact,
            }
        }
    })
}

/// Type-dispatched cell equality. Unparseable numbers count as a mismatch.
pub fn compare_cell(pred: &Cell, gold: &Cell, cfg: &ComparatorConfig) -> bool {
    try_compare_cell(pred, gold, cfg).unwrap_or_else(|e| {
        log::debug!("cell mismatch: {e}");
        false
    })
}
