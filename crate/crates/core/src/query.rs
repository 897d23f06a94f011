use std::collections::HashSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{header_key, TableError, TableSchema};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("query text is empty")]
    Empty,
    #[error("requested column {0:?} appears twice")]
    DuplicateColumn(String),
}

/// A natural-language table request.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Query {
    pub text: String,
    pub language: String,
    pub requested_columns: Option<Vec<String>>,
}

static COLUMNS_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)\bcolumns?\s*:\s*(.+?)(?:\.\s|\.$|\n|$)").unwrap());

impl Query {
    /// Builds a query, pulling a `Columns: a, b, c.` list out of the text when present.
    pub fn new(text: impl Into<String>) -> Result<Self, QueryError> {
        let text = text.into();
        let requested_columns = parse_requested_columns(&text);
        Self::with_columns(text, "en", requested_columns)
    }

    pub fn with_columns(
        text: impl Into<String>,
        language: impl Into<String>,
        requested_columns: Option<Vec<String>>,
    ) -> Result<Self, QueryError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(QueryError::Empty);
        }
        if let Some(cols) = &requested_columns {
            let mut seen = HashSet::new();
            for c in cols {
                if !seen.insert(header_key(c)) {
                    return Err(QueryError::DuplicateColumn(c.clone()));
                }
            }
        }
        Ok(Query { text, language: language.into(), requested_columns })
    }

    /// Schema implied by the requested columns, kinds inferred from names.
    pub fn schema(&self) -> Option<Result<TableSchema, TableError>> {
        self.requested_columns.as_ref().map(|c| TableSchema::from_names(c))
    }

    /// True when the request asks for rows in chronological order.
    pub fn wants_chronological(&self) -> bool {
        let t = self.text.to_lowercase();
        t.contains("chronological") || t.contains("sorted by date") || t.contains("ordered by date")
    }
}

fn parse_requested_columns(text: &str) -> Option<Vec<String>> {
    let caps = COLUMNS_RE.captures(text)?;
    let cols: Vec<String> = caps[1]
        .split(',')
        .map(|c| {
            let c = c.trim().trim_matches(|ch| ch == '*' || ch == '_');
            c.strip_prefix("and ").unwrap_or(c).trim().to_string()
        })
        .filter(|c| !c.is_empty())
        .collect();
    (!cols.is_empty()).then_some(cols)
}
