//! Tables, schemas and the Markdown pipe-table wire format.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NA;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("no pipe table found")]
    NoTableFound,
    #[error("no header cell aligns with a schema column (header: {0:?})")]
    HeaderMismatch(Vec<String>),
    #[error("schema must have at least one column")]
    EmptySchema,
    #[error("duplicate column name {0:?}")]
    DuplicateColumn(String),
    #[error("row {row} has {got} cells, schema has {want}")]
    RowWidth { row: usize, got: usize, want: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    #[default]
    Text,
    Numeric,
    Url,
    Date,
    Categorical,
}

impl ColumnKind {
    /// Guess a column kind from its header name.
    pub fn infer(name: &str) -> Self {
        let n = name.to_lowercase();
        let tokens: Vec<&str> = n.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()).collect();
        let has = |words: &[&str]| words.iter().any(|w| tokens.contains(w));
        if has(&["url", "link", "website", "homepage"]) {
            ColumnKind::Url
        } else if has(&["date", "time", "year", "day", "month", "timestamp"]) {
            ColumnKind::Date
        } else if has(&[
            "number", "count", "cores", "threads", "ghz", "mb", "gb", "nm", "price", "population", "amount",
            "revenue", "attendance", "score", "rank", "units", "millions", "temperature",
        ]) {
            ColumnKind::Numeric
        } else if has(&["country", "organisation", "organization", "status", "type", "series", "architecture", "category"]) {
            ColumnKind::Categorical
        } else {
            ColumnKind::Text
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    #[serde(default)]
    pub kind: ColumnKind,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind) -> Self {
        Column { name: name.into(), kind }
    }
}

/// Case-folded, whitespace-collapsed header key used for column alignment.
pub fn header_key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaRepr", into = "SchemaRepr")]
pub struct TableSchema {
    columns: Vec<Column>,
}

#[derive(Serialize, Deserialize)]
struct SchemaRepr {
    columns: Vec<Column>,
}

impl TryFrom<SchemaRepr> for TableSchema {
    type Error = TableError;
    fn try_from(r: SchemaRepr) -> Result<Self, TableError> {
        TableSchema::new(r.columns)
    }
}

impl From<TableSchema> for SchemaRepr {
    fn from(s: TableSchema) -> Self {
        SchemaRepr { columns: s.columns }
    }
}

impl TableSchema {
    pub fn new(columns: Vec<Column>) -> Result<Self, TableError> {
        if columns.is_empty() {
            return Err(TableError::EmptySchema);
        }
        let mut seen = HashSet::new();
        for c in &columns {
            if !seen.insert(header_key(&c.name)) {
                return Err(TableError::DuplicateColumn(c.name.clone()));
            }
        }
        Ok(TableSchema { columns })
    }

    /// Schema from bare names, kinds inferred from the names.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TableError> {
        Self::new(
            names
                .iter()
                .map(|n| Column::new(n.as_ref().trim(), ColumnKind::infer(n.as_ref())))
                .collect(),
        )
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        let key = header_key(name);
        self.columns.iter().position(|c| header_key(&c.name) == key)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub raw: String,
    pub kind: ColumnKind,
}

impl Cell {
    pub fn new(raw: impl Into<String>, kind: ColumnKind) -> Self {
        Cell { raw: raw.into(), kind }
    }

    pub fn na(kind: ColumnKind) -> Self {
        Cell::new(NA, kind)
    }

    pub fn is_na(&self) -> bool {
        self.raw == NA
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Table {
    schema: TableSchema,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn empty(schema: TableSchema) -> Self {
        Table { schema, rows: Vec::new() }
    }

    /// Builds a table from raw strings; cell kinds come from the schema.
    pub fn from_rows<R, S>(schema: TableSchema, rows: R) -> Result<Self, TableError>
    where
        R: IntoIterator,
        R::Item: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut t = Table::empty(schema);
        for (i, row) in rows.into_iter().enumerate() {
            let raw: Vec<String> = row.into_iter().map(Into::into).collect();
            if raw.len() != t.schema.len() {
                return Err(TableError::RowWidth { row: i, got: raw.len(), want: t.schema.len() });
            }
            t.push_raw(raw);
        }
        Ok(t)
    }

    fn push_raw(&mut self, raw: Vec<String>) {
        let row = raw
            .into_iter()
            .zip(self.schema.columns.iter())
            .map(|(r, c)| Cell::new(r, c.kind))
            .collect();
        self.rows.push(row);
    }

    pub fn schema(&self) -> &TableSchema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn row_count(&self) -> usize {
        self.rows.len()
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), TableError> {
        if row.len() != self.schema.len() {
            return Err(TableError::RowWidth { row: self.rows.len(), got: row.len(), want: self.schema.len() });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn raw_rows(&self) -> Vec<Vec<&str>> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|c| c.raw.as_str()).collect())
            .collect()
    }
}

impl fmt::Display for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&render_table(self))
    }
}

fn escape_cell(raw: &str) -> String {
    let mut out = String::with_capacity(raw.len());
    for ch in raw.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '|' => out.push_str("\\|"),
            '\n' => out.push_str("\\n"),
            '\r' => {}
            c => out.push(c),
        }
    }
    out
}

fn unescape_cell(cell: &str) -> String {
    let mut out = String::with_capacity(cell.len());
    let mut chars = cell.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('|') => out.push('|'),
            Some('n') => out.push('\n'),
            Some(other) => {
                out.push('\\');
                out.push(other);
            }
            None => out.push('\\'),
        }
    }
    out
}

/// Splits a table line on unescaped pipes, dropping the outer border cells.
fn split_row(line: &str) -> Vec<String> {
    let line = line.trim();
    let mut cells = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\\' => {
                cur.push(c);
                if let Some(n) = chars.next() {
                    cur.push(n);
                }
            }
            '|' => cells.push(std::mem::take(&mut cur)),
            _ => cur.push(c),
        }
    }
    cells.push(cur);
    if line.starts_with('|') {
        cells.remove(0);
    }
    if line.ends_with('|') && !line.ends_with("\\|") && !cells.is_empty() {
        cells.pop();
    }
    cells.into_iter().map(|c| unescape_cell(c.trim())).collect()
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    if !t.contains('-') || !t.contains('|') && !t.starts_with('-') {
        return false;
    }
    let inner = t.trim_matches('|');
    !inner.is_empty()
        && inner.split('|').all(|seg| {
            let s = seg.trim();
            let s = s.strip_prefix(':').unwrap_or(s);
            let s = s.strip_suffix(':').unwrap_or(s);
            !s.is_empty() && s.chars().all(|c| c == '-')
        })
}

fn is_table_line(line: &str) -> bool {
    line.trim_start().starts_with('|')
}

/// A raw pipe-table block: header cells plus data rows, before schema alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Every pipe-table block in `text`, in document order.
pub fn find_tables(text: &str) -> Vec<RawTable> {
    let lines: Vec<&str> = text.lines().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i + 1 < lines.len() {
        if is_table_line(lines[i]) && is_separator(lines[i + 1]) {
            let header = split_row(lines[i]);
            let mut rows = Vec::new();
            let mut j = i + 2;
            while j < lines.len() && is_table_line(lines[j]) {
                rows.push(split_row(lines[j]));
                j += 1;
            }
            out.push(RawTable { header, rows });
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

/// Result of aligning a raw block to a schema.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedTable {
    pub table: Table,
    /// Predicted header cells that matched no schema column.
    pub dropped_columns: Vec<String>,
}

pub fn align(raw: &RawTable, schema: &TableSchema) -> Result<ParsedTable, TableError> {
    let header_keys: Vec<String> = raw.header.iter().map(|h| header_key(h)).collect();
    let mapping: Vec<Option<usize>> = schema
        .columns()
        .iter()
        .map(|c| {
            let key = header_key(&c.name);
            header_keys.iter().position(|h| *h == key)
        })
        .collect();
    if mapping.iter().all(Option::is_none) {
        return Err(TableError::HeaderMismatch(raw.header.clone()));
    }
    let dropped_columns = raw
        .header
        .iter()
        .enumerate()
        .filter(|(i, _)| !mapping.contains(&Some(*i)))
        .map(|(_, h)| h.clone())
        .collect::<Vec<_>>();
    for d in &dropped_columns {
        log::warn!("dropping unmatched column {d:?}");
    }
    let mut table = Table::empty(schema.clone());
    for row in &raw.rows {
        let cells = mapping
            .iter()
            .map(|m| match m.and_then(|i| row.get(i)) {
                Some(v) => v.clone(),
                None => NA.to_string(),
            })
            .collect();
        table.push_raw(cells);
    }
    Ok(ParsedTable { table, dropped_columns })
}

/// Parses the first pipe table in `markdown` and aligns it to `schema`.
pub fn parse_table(markdown: &str, schema: &TableSchema) -> Result<Table, TableError> {
    parse_table_detailed(markdown, schema).map(|p| p.table)
}

pub fn parse_table_detailed(markdown: &str, schema: &TableSchema) -> Result<ParsedTable, TableError> {
    let raw = find_tables(markdown)
        .into_iter()
        .next()
        .ok_or(TableError::NoTableFound)?;
    align(&raw, schema)
}

pub fn render_table(table: &Table) -> String {
    let mut out = String::new();
    let line = |cells: Vec<String>| format!("| {} |\n", cells.join(" | "));
    out.push_str(&line(
        table.schema.columns.iter().map(|c| escape_cell(&c.name)).collect(),
    ));
    out.push_str(&line(vec!["---".to_string(); table.schema.len()]));
    for row in &table.rows {
        out.push_str(&line(row.iter().map(|c| escape_cell(&c.raw)).collect()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnCoverage {
    pub column: String,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub row_count: usize,
    pub column_coverage: Vec<ColumnCoverage>,
    pub duplicate_rows: usize,
    /// Schema columns the table does not carry at all.
    pub missing_columns: Vec<String>,
}

pub(crate) fn row_key(row: &[Cell]) -> Vec<&str> {
    row.iter().map(|c| c.raw.trim()).collect()
}

pub fn validate_against_schema(table: &Table, schema: &TableSchema) -> ValidationReport {
    let mut column_coverage = Vec::new();
    let mut missing_columns = Vec::new();
    for col in schema.columns() {
        match table.schema.position(&col.name) {
            Some(idx) => {
                let filled = table.rows.iter().filter(|r| !r[idx].is_na()).count();
                let coverage = if table.rows.is_empty() {
                    0.0
                } else {
                    filled as f64 / table.rows.len() as f64
                };
                column_coverage.push(ColumnCoverage { column: col.name.clone(), coverage });
            }
            None => {
                missing_columns.push(col.name.clone());
                column_coverage.push(ColumnCoverage { column: col.name.clone(), coverage: 0.0 });
            }
        }
    }
    let mut seen = HashSet::new();
    let duplicate_rows = table.rows.iter().filter(|r| !seen.insert(row_key(r))).count();
    ValidationReport {
        row_count: table.rows.len(),
        column_coverage,
        duplicate_rows,
        missing_columns,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn schema(names: &[&str]) -> TableSchema {
        TableSchema::new(names.iter().map(|n| Column::new(*n, ColumnKind::Text)).collect()).unwrap()
    }

    #[test]
    fn infers_kinds_from_whole_words() {
        assert_eq!(ColumnKind::infer("Host Country"), ColumnKind::Categorical);
        assert_eq!(ColumnKind::infer("L3 Cache (MB)"), ColumnKind::Numeric);
        assert_eq!(ColumnKind::infer("Publication Date"), ColumnKind::Date);
        assert_eq!(ColumnKind::infer("Paper Title"), ColumnKind::Text);
    }

    #[test]
    fn parses_single_row() {
        let s = schema(&["Date", "City"]);
        let t = parse_table("| Date | City |\n|---|---|\n| 2010-03-04 | Tampa |", &s).unwrap();
        assert_eq!(t.raw_rows(), vec![vec!["2010-03-04", "Tampa"]]);
    }

    #[test]
    fn header_only_is_empty_table() {
        let s = schema(&["Date", "City"]);
        let t = parse_table("| Date | City |\n|---|---|\n", &s).unwrap();
        assert_eq!(t.row_count(), 0);
    }

    #[test]
    fn short_rows_are_padded() {
        let s = schema(&["A", "B", "C"]);
        let t = parse_table("| A | B | C |\n| --- | :---: | ---: |\n| x |\n", &s).unwrap();
        assert_eq!(t.raw_rows(), vec![vec!["x", "NA", "NA"]]);
    }

    #[test]
    fn padded_fixture_file() {
        let s = schema(&["Name", "Year", "Venue"]);
        let t = parse_table(include_str!("../tests/fixtures/ragged.md"), &s).unwrap();
        assert_eq!(
            t.raw_rows(),
            vec![
                vec!["Alpha", "2001", "Hall"],
                vec!["Beta", "NA", "NA"],
                vec!["Gamma", "2003", "NA"],
            ]
        );
    }

    #[test]
    fn aligns_paraphrased_headers_and_drops_extras() {
        let s = schema(&["Host City", "Date"]);
        let p = parse_table_detailed("|  date | Notes | host   CITY |\n|-|-|-|\n| d1 | n | c1 |", &s).unwrap();
        assert_eq!(p.table.raw_rows(), vec![vec!["c1", "d1"]]);
        assert_eq!(p.dropped_columns, vec!["Notes".to_string()]);
    }

    #[test]
    fn missing_schema_column_is_na() {
        let s = schema(&["A", "B"]);
        let t = parse_table("| B |\n|---|\n| 1 |", &s).unwrap();
        assert_eq!(t.raw_rows(), vec![vec!["NA", "1"]]);
    }

    #[test]
    fn errors() {
        let s = schema(&["A"]);
        assert_eq!(parse_table("no table here", &s), Err(TableError::NoTableFound));
        assert!(matches!(
            parse_table("| X | Y |\n|---|---|\n| 1 | 2 |", &s),
            Err(TableError::HeaderMismatch(_))
        ));
    }

    #[test]
    fn table_embedded_in_prose() {
        let s = schema(&["A"]);
        let text = "Found these:\n\n| A |\n|---|\n| one |\n| two |\n\nDone.";
        assert_eq!(parse_table(text, &s).unwrap().row_count(), 2);
    }

    #[test]
    fn render_empty() {
        let t = Table::empty(schema(&["A", "B"]));
        assert_eq!(render_table(&t), "| A | B |\n| --- | --- |\n");
    }

    #[test]
    fn pipes_and_newlines_escape() {
        let s = schema(&["A"]);
        let t = Table::from_rows(s.clone(), vec![vec!["a|b\nc"]]).unwrap();
        let md = render_table(&t);
        assert_eq!(md, "| A |\n| --- |\n| a\\|b\\nc |\n");
        assert_eq!(parse_table(&md, &s).unwrap(), t);
    }

    #[test]
    fn schema_invariants() {
        assert_eq!(TableSchema::new(vec![]), Err(TableError::EmptySchema));
        assert!(matches!(
            TableSchema::from_names(&["Host City", "host  city"]),
            Err(TableError::DuplicateColumn(_))
        ));
    }

    #[test]
    fn validation_report() {
        let s = schema(&["A", "B"]);
        let full = Table::from_rows(s.clone(), vec![vec!["1", "2"], vec!["3", "4"]]).unwrap();
        let r = validate_against_schema(&full, &s);
        assert!(r.column_coverage.iter().all(|c| c.coverage == 1.0));
        assert_eq!(r.duplicate_rows, 0);

        let rows: Vec<Vec<String>> = (0..10).map(|i| vec![i.to_string(), NA.to_string()]).collect();
        let half = Table::from_rows(s.clone(), rows).unwrap();
        let r = validate_against_schema(&half, &s);
        assert_eq!(r.row_count, 10);
        assert_eq!(r.column_coverage[1].coverage, 0.0);

        let dup = Table::from_rows(s.clone(), vec![vec!["x", "y"], vec!["x", "y"]]).unwrap();
        assert_eq!(validate_against_schema(&dup, &s).duplicate_rows, 1);
    }

    fn cell_strategy() -> impl Strategy<Value = String> {
        // Cells are trimmed on parse, so generated values carry no outer whitespace.
        "[a-zA-Z0-9|\\\\\n .,-]{0,12}".prop_map(|s| s.trim().to_string())
    }

    proptest! {
        #[test]
        fn render_parse_round_trip(
            ncols in 1usize..5,
            rows in proptest::collection::vec(proptest::collection::vec(cell_strategy(), 4), 0..8),
        ) {
            let names: Vec<String> = (0..ncols).map(|i| format!("Col {i}")).collect();
            let s = TableSchema::from_names(&names).unwrap();
            let rows: Vec<Vec<String>> = rows.into_iter().map(|r| r.into_iter().take(ncols).collect()).collect();
            let t = Table::from_rows(s.clone(), rows).unwrap();
            let back = parse_table(&render_table(&t), &s).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn ragged_rows_keep_width(widths in proptest::collection::vec(0usize..7, 0..10)) {
            let s = schema(&["A", "B", "C"]);
            let mut md = String::from("| A | B | C |\n|---|---|---|\n");
            for (i, w) in widths.iter().enumerate() {
                let cells: Vec<String> = (0..*w).map(|j| format!("r{i}c{j}")).collect();
                md.push_str(&format!("| {} |\n", cells.join(" | ")));
            }
            let t = parse_table(&md, &s).unwrap();
            prop_assert_eq!(t.row_count(), widths.len());
            for (i, row) in t.rows().iter().enumerate() {
                prop_assert_eq!(row.len(), 3);
                if widths[i] > 0 {
                    prop_assert_eq!(&row[0].raw, &format!("r{i}c0"));
                }
            }
        }
    }
}
