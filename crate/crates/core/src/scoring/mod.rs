//! Table scoring: type-specific cell comparators, optimal row matching,
//! success rate, Row F1, Item F1 and multi-run aggregation.

mod assign;
mod compare;
pub mod url;

use std::collections::HashMap;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

pub use assign::{assignment_weight, max_weight_assignment};
pub use compare::{
    compare_cell, normalize_text, numbers_match, parse_number, try_compare_cell, CompareError, ComparatorConfig,
    SemanticJudge, TextNormalization,
};
pub use url::normalize_url;

use crate::table::{Cell, ColumnKind, Table};
use crate::NA;

/// Pre-normalised cell so the n×m comparison matrix avoids re-normalising.
#[derive(Debug, Clone, PartialEq)]
enum CellKey {
    Na,
    Text(String),
    Number(Option<f64>),
    Missing,
}

fn cell_key(cell: &Cell, kind: ColumnKind, cfg: &ComparatorConfig) -> CellKey {
    let raw = cell.raw.trim();
    if raw == NA {
        return CellKey::Na;
    }
    match kind {
        ColumnKind::Numeric => CellKey::Number(parse_number(raw)),
        ColumnKind::Url => CellKey::Text(normalize_url(raw)),
        _ => CellKey::Text(normalize_text(raw, &cfg.text)),
    }
}

struct Matcher<'a> {
    cfg: &'a ComparatorConfig,
    judged: Mutex<HashMap<(String, String), bool>>,
}

impl Matcher<'_> {
    fn eq(&self, p: &CellKey, g: &CellKey, kind: ColumnKind, praw: &str, graw: &str) -> bool {
        match (p, g) {
            (CellKey::Missing, _) | (_, CellKey::Missing) => false,
            (CellKey::Na, CellKey::Na) => true,
            (CellKey::Na, _) | (_, CellKey::Na) => false,
            (CellKey::Number(Some(a)), CellKey::Number(Some(b))) => numbers_match(*a, *b, self.cfg),
            (CellKey::Number(_), CellKey::Number(_)) => false,
            (CellKey::Text(a), CellKey::Text(b)) => {
                if a == b {
                    return true;
                }
                match (&self.cfg.judge, kind) {
                    (Some(j), ColumnKind::Text) => {
                        let k = (praw.trim().to_string(), graw.trim().to_string());
                        if let Some(v) = self.judged.lock().unwrap().get(&k) {
                            return *v;
                        }
                        let v = j.judge(&k.0, &k.1).unwrap_or(false);
                        self.judged.lock().unwrap().insert(k, v);
                        v
                    }
                    _ => false,
                }
            }
            _ => false,
        }
    }
}

/// Per-pair cell match flags, gold column order.
#[derive(Debug, Clone)]
pub struct MatchMatrix {
    pub pred_rows: usize,
    pub gold_rows: usize,
    pub columns: usize,
    flags: Vec<bool>,
}

impl MatchMatrix {
    pub fn cell(&self, p: usize, g: usize, c: usize) -> bool {
        self.flags[(p * self.gold_rows + g) * self.columns + c]
    }

    pub fn matched_cells(&self, p: usize, g: usize) -> usize {
        (0..self.columns).filter(|&c| self.cell(p, g, c)).count()
    }
}

/// Compares every predicted row with every gold row. Predicted columns are
/// aligned to gold columns by header; gold columns missing from the
/// prediction never match.
pub fn match_matrix(pred: &Table, gold: &Table, cfg: &ComparatorConfig) -> MatchMatrix {
    let gold_cols = gold.schema().columns();
    let mapping: Vec<Option<usize>> = gold_cols.iter().map(|c| pred.schema().position(&c.name)).collect();
    let pred_keys: Vec<Vec<CellKey>> = pred
        .rows()
        .iter()
        .map(|r| {
            mapping
                .iter()
                .zip(gold_cols)
                .map(|(m, col)| m.map_or(CellKey::Missing, |i| cell_key(&r[i], col.kind, cfg)))
                .collect()
        })
        .collect();
    let gold_keys: Vec<Vec<CellKey>> = gold
        .rows()
        .iter()
        .map(|r| r.iter().zip(gold_cols).map(|(cell, col)| cell_key(cell, col.kind, cfg)).collect())
        .collect();
    let matcher = Matcher { cfg, judged: Mutex::new(HashMap::new()) };
    let columns = gold_cols.len();
    let mut flags = Vec::with_capacity(pred_keys.len() * gold_keys.len() * columns);
    for (pi, pk) in pred_keys.iter().enumerate() {
        for (gi, gk) in gold_keys.iter().enumerate() {
            for c in 0..columns {
                let praw = mapping[c].map_or("", |i| pred.rows()[pi][i].raw.as_str());
                flags.push(matcher.eq(&pk[c], &gk[c], gold_cols[c].kind, praw, &gold.rows()[gi][c].raw));
            }
        }
    }
    MatchMatrix { pred_rows: pred_keys.len(), gold_rows: gold_keys.len(), columns, flags }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: usize,
    pub gold: usize,
    pub matched_cells: usize,
}

/// One-to-one row assignment maximising matched cells, then fully matched rows.
pub fn match_rows(pred: &Table, gold: &Table, cfg: &ComparatorConfig) -> Vec<MatchedPair> {
    assign_rows(&match_matrix(pred, gold, cfg))
}

fn assign_rows(m: &MatchMatrix) -> Vec<MatchedPair> {
    // Scaling by (rows + 1) keeps the full-row bonus strictly secondary.
    let scale = m.pred_rows.min(m.gold_rows) as i64 + 1;
    let weights: Vec<Vec<i64>> = (0..m.pred_rows)
        .map(|p| {
            (0..m.gold_rows)
                .map(|g| {
                    let cells = m.matched_cells(p, g);
                    cells as i64 * scale + i64::from(cells == m.columns && m.columns > 0)
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(p, g)| g.map(|g| MatchedPair { pred: p, gold: g, matched_cells: m.matched_cells(p, g) }))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnAccuracy {
    pub column: String,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub success: bool,
    pub row_precision: f64,
    pub row_recall: f64,
    pub row_f1: f64,
    pub item_precision: f64,
    pub item_recall: f64,
    pub item_f1: f64,
    /// Matched cells in the column over the gold row count.
    pub per_column_accuracy: Vec<ColumnAccuracy>,
    /// Filled in by callers that know how gold rows partition (see `evolution::verify`).
    #[serde(default)]
    pub missing_row_categories: Vec<String>,
    /// Gold rows with no fully matching predicted row.
    pub unmatched_gold_rows: Vec<usize>,
    pub matched_pairs: Vec<MatchedPair>,
}

pub fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

pub fn score(pred: &Table, gold: &Table, cfg: &ComparatorConfig) -> ScoreReport {
    let m = match_matrix(pred, gold, cfg);
    let pairs = assign_rows(&m);
    let cols = m.columns;
    let (np, ng) = (m.pred_rows, m.gold_rows);
    let both_empty = np == 0 && ng == 0;
    let empty_val = if both_empty { 1.0 } else { 0.0 };

    let matched_cells: usize = pairs.iter().map(|p| p.matched_cells).sum();
    let full: Vec<&MatchedPair> = pairs.iter().filter(|p| p.matched_cells == cols).collect();

    let row_precision = ratio(full.len(), np, empty_val);
    let row_recall = ratio(full.len(), ng, empty_val);
    let item_precision = ratio(matched_cells, np * cols, empty_val);
    let item_recall = ratio(matched_cells, ng * cols, empty_val);

    let per_column_accuracy = gold
        .schema()
        .columns()
        .iter()
        .enumerate()
        .map(|(c, col)| {
            let hits = pairs.iter().filter(|p| m.cell(p.pred, p.gold, c)).count();
            ColumnAccuracy { column: col.name.clone(), accuracy: ratio(hits, ng, if np == 0 { 1.0 } else { 0.0 }) }
        })
        .collect();

    let fully_matched: std::collections::HashSet<usize> = full.iter().map(|p| p.gold).collect();
    let unmatched_gold_rows = (0..ng).filter(|g| !fully_matched.contains(g)).collect();

    let success = np == ng && matched_cells == ng * cols;
    ScoreReport {
        success,
        row_precision,
        row_recall,
        row_f1: if both_empty { 1.0 } else { f1(row_precision, row_recall) },
        item_precision,
        item_recall,
        item_f1: if both_empty { 1.0 } else { f1(item_precision, item_recall) },
        per_column_accuracy,
        missing_row_categories: Vec::new(),
        unmatched_gold_rows,
        matched_pairs: pairs,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub success_rate: f64,
    pub row_precision: f64,
    pub row_recall: f64,
    pub row_f1: f64,
    pub item_precision: f64,
    pub item_recall: f64,
    pub item_f1: f64,
}

impl MetricSet {
    fn of(r: &ScoreReport) -> Self {
        MetricSet {
            success_rate: if r.success { 1.0 } else { 0.0 },
            row_precision: r.row_precision,
            row_recall: r.row_recall,
            row_f1: r.row_f1,
            item_precision: r.item_precision,
            item_recall: r.item_recall,
            item_f1: r.item_f1,
        }
    }

    fn fields(&mut self) -> [&mut f64; 7] {
        [
            &mut self.success_rate,
            &mut self.row_precision,
            &mut self.row_recall,
            &mut self.row_f1,
            &mut self.item_precision,
            &mut self.item_recall,
            &mut self.item_f1,
        ]
    }
}

/// Avg@k and Max@k over independent runs of the same task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAggregate {
    pub runs: usize,
    pub avg: MetricSet,
    pub max: MetricSet,
}

pub fn aggregate_runs(reports: &[ScoreReport]) -> Option<RunAggregate> {
    if reports.is_empty() {
        return None;
    }
    let mut avg = MetricSet::default();
    let mut max = MetricSet::of(&reports[0]);
    for r in reports {
        let mut m = MetricSet::of(r);
        for ((a, mx), v) in avg.fields().into_iter().zip(max.fields()).zip(m.fields()) {
            *a += *v;
            *mx = mx.max(*v);
        }
    }
    let k = reports.len() as f64;
    for a in avg.fields() {
        *a /= k;
    }
    Some(RunAggregate { runs: reports.len(), avg, max })
}
