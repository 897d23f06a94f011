//! Concatenation of worker slots into the final table.

use std::collections::HashSet;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::Serialize;

use super::{AgentError, SubtaskSpec};
use crate::query::Query;
use crate::table::{align, find_tables, row_key, Cell, ColumnKind, Table, TableSchema};
use crate::workboard::Workboard;

/// Every table row in `slot`, aligned to `schema`. Blocks whose header
/// matches no schema column are skipped.
pub(crate) fn slot_rows(slot: &str, schema: &TableSchema) -> Vec<Vec<Cell>> {
    find_tables(slot)
        .iter()
        .filter_map(|raw| align(raw, schema).ok())
        .flat_map(|p| p.table.rows().to_vec())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregated {
    #[serde(skip)]
    pub table: Table,
    /// Rows parsed from all slots before deduplication.
    pub raw_rows: usize,
    pub duplicates_removed: usize,
    pub sorted_by: Option<String>,
}

static YEAR_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b(1[89]\d{2}|20\d{2})\b").unwrap());

const DATE_FORMATS: [&str; 9] =
    ["%Y-%m-%d", "%Y/%m/%d", "%d/%m/%Y", "%B %d, %Y", "%b %d, %Y", "%d %B %Y", "%d %b %Y", "%Y.%m.%d", "%m/%d/%Y"];

/// Sort key for a date cell: full dates first, then year-month, then a bare
/// year (taken as January 1). `None` sorts after every date.
pub fn date_sort_key(raw: &str) -> Option<NaiveDate> {
    let s = raw.trim();
    for f in DATE_FORMATS {
        if let Ok(d) = NaiveDate::parse_from_str(s, f) {
            return Some(d);
        }
    }
    for f in ["%Y-%m", "%B %Y", "%b %Y"] {
        if let Ok(d) = NaiveDate::parse_from_str(&format!("{s} 1"), &format!("{f} %d")) {
            return Some(d);
        }
    }
    let y: i32 = YEAR_RE.captures(s)?[1].parse().ok()?;
    NaiveDate::from_ymd_opt(y, 1, 1)
}

/// Parses each slot in checklist order, aligns to `schema`, drops exact
/// duplicate rows (first kept) and applies chronological order when asked.
/// Rows are never rewritten.
pub fn aggregate(board: &Workboard, specs: &[SubtaskSpec], schema: &TableSchema, query: &Query) -> Result<Aggregated, AgentError> {
    let wanted: HashSet<&str> = specs.iter().map(|s| s.id.as_str()).collect();
    let mut rows: Vec<Vec<Cell>> = Vec::new();
    for (id, slot) in board.slots() {
        if wanted.is_empty() || wanted.contains(id) {
            rows.extend(slot_rows(slot, schema));
        }
    }
    if rows.is_empty() {
        return Err(AgentError::EmptyResult);
    }
    let raw_rows = rows.len();
    let mut seen = HashSet::new();
    let mut unique: Vec<Vec<Cell>> = Vec::new();
    for r in rows {
        let key: Vec<String> = row_key(&r).into_iter().map(String::from).collect();
        if seen.insert(key) {
            unique.push(r);
        }
    }
    let duplicates_removed = raw_rows - unique.len();
    let mut sorted_by = None;
    if query.wants_chronological() {
        if let Some(idx) = schema.columns().iter().position(|c| c.kind == ColumnKind::Date) {
            // Stable: equal dates keep slot order.
            unique.sort_by_cached_key(|r| {
                let k = date_sort_key(&r[idx].raw);
                (k.is_none(), k)
            });
            sorted_by = Some(schema.columns()[idx].name.clone());
        }
    }
    let mut table = Table::empty(schema.clone());
    for r in unique {
        table.push_row(r)?;
    }
    Ok(Aggregated { table, raw_rows, duplicates_removed, sorted_by })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workboard::{NewSubtask, Workboard};

    #[test]
    fn date_keys() {
        assert_eq!(date_sort_key("2013-03-13"), NaiveDate::from_ymd_opt(2013, 3, 13));
        assert_eq!(date_sort_key("March 13, 2013"), NaiveDate::from_ymd_opt(2013, 3, 13));
        assert_eq!(date_sort_key("2024-07"), NaiveDate::from_ymd_opt(2024, 7, 1));
        assert_eq!(date_sort_key("circa 2019"), NaiveDate::from_ymd_opt(2019, 1, 1));
        assert_eq!(date_sort_key("NA"), None);
    }

    #[test]
    fn dedup_keeps_first_and_sorts() {
        let schema = TableSchema::from_names(&["Date", "City"]).unwrap();
        let subtasks = [
            NewSubtask { id: "t1".into(), summary: "a".into() },
            NewSubtask { id: "t2".into(), summary: "b".into() },
        ];
        let mut b = Workboard::new(&subtasks, "").unwrap();
        use crate::workboard::{Contribution, WriteMode};
        let t1 = "| Date | City |\n|---|---|\n| 2015-05-05 | Tokyo |\n| NA | Paris |\n";
        let t2 = "| City | Date |\n|---|---|\n| Tokyo | 2015-05-05 |\n| Oslo | 2011-01-01 |\n";
        b.apply(&Contribution { slot: "t1".into(), payload: t1.into(), mode: WriteMode::Append }).unwrap();
        b.apply(&Contribution { slot: "t2".into(), payload: t2.into(), mode: WriteMode::Append }).unwrap();
        let q = Query::new("List shows in chronological order. Columns: Date, City.").unwrap();
        let a = aggregate(&b, &[], &schema, &q).unwrap();
        assert_eq!((a.raw_rows, a.duplicates_removed), (4, 1));
        let cities: Vec<&str> = a.table.rows().iter().map(|r| r[1].raw.as_str()).collect();
        assert_eq!(cities, ["Oslo", "Tokyo", "Paris"]);
    }

    #[test]
    fn empty_slots_are_an_error() {
        let schema = TableSchema::from_names(&["Date"]).unwrap();
        let b = Workboard::new(&[NewSubtask { id: "t1".into(), summary: "a".into() }], "").unwrap();
        let q = Query::new("x").unwrap();
        assert!(matches!(aggregate(&b, &[], &schema, &q), Err(AgentError::EmptyResult)));
    }
}
