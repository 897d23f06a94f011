//! The structural-placeholder constraint on reflected skill text.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;

/// The only placeholders a reflected skill may use.
pub const PLACEHOLDERS: [&str; 6] = ["{ENTITY}", "{TIME_RANGE}", "{REGION}", "{SOURCE}", "{CATEGORY}", "{FIELD}"];

/// Capitalised words that carry structure, not identity.
const STRUCTURAL_WORDS: [&str; 12] =
    ["na", "markdown", "output", "columns", "column", "list", "compile", "find", "search", "each", "include", "if"];

/// Function words never treated as literals even inside a capitalised run.
const FUNCTION_WORDS: [&str; 16] =
    ["the", "a", "an", "of", "and", "or", "in", "on", "for", "by", "to", "from", "with", "at", "s", "de"];

static WORD_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+").unwrap());
static PLACEHOLDER_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{[A-Z][A-Z_]*\}").unwrap());
static COLUMNS_TAIL_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)\bcolumns?\s*:.*").unwrap());

/// Lower-cased tokens that identify entities in `query`: capitalised words
/// not opening a sentence, acronyms, and tokens of three or more characters
/// containing a digit (years, model numbers). The column list is ignored.
pub fn entity_literals(query: &str) -> BTreeSet<String> {
    let text = COLUMNS_TAIL_RE.replace_all(query, "");
    let mut out = BTreeSet::new();
    let mut sentence_start = true;
    let mut last_end = 0;
    for m in WORD_RE.find_iter(&text) {
        let gap = &text[last_end..m.start()];
        if gap.contains(['.', '!', '?', ':', '\n']) && !gap.contains(['\'', '’']) {
            sentence_start = true;
        }
        last_end = m.end();
        let w = m.as_str();
        let lower = w.to_lowercase();
        let first_upper = w.chars().next().is_some_and(char::is_uppercase);
        let acronym = w.chars().count() >= 2 && w.chars().filter(|c| c.is_alphabetic()).all(char::is_uppercase)
            && w.chars().any(char::is_alphabetic);
        let has_digit = w.chars().any(|c| c.is_ascii_digit());
        let literal = if has_digit {
            w.chars().count() >= 3
        } else {
            (acronym || (first_upper && !sentence_start)) && !FUNCTION_WORDS.contains(&lower.as_str())
        };
        if literal && !STRUCTURAL_WORDS.contains(&lower.as_str()) {
            out.insert(lower);
        }
        sentence_start = false;
    }
    out
}

/// Why `text` breaks the placeholder constraint, if it does.
pub fn hygiene_violations(text: &str, literals: &BTreeSet<String>) -> Vec<String> {
    let mut v = Vec::new();
    for p in PLACEHOLDER_RE.find_iter(text) {
        if !PLACEHOLDERS.contains(&p.as_str()) {
            v.push(format!("unknown placeholder {}", p.as_str()));
        }
    }
    let stripped = PLACEHOLDER_RE.replace_all(text, " ");
    let mut hit = BTreeSet::new();
    for w in WORD_RE.find_iter(&stripped) {
        let lower = w.as_str().to_lowercase();
        if literals.contains(&lower) && hit.insert(lower.clone()) {
            v.push(format!("entity literal {lower:?}"));
        }
    }
    v
}
