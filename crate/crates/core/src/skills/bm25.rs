//! Okapi BM25 over skill documents.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

/// Lowercased alphanumeric runs.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DocTerms {
    pub tf: HashMap<String, u32>,
    pub len: u32,
}

impl DocTerms {
    pub fn from_text(text: &str) -> Self {
        let tokens = tokenize(text);
        let mut tf = HashMap::new();
        for t in &tokens {
            *tf.entry(t.clone()).or_insert(0) += 1;
        }
        DocTerms { tf, len: tokens.len() as u32 }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorpusStats {
    pub doc_count: usize,
    pub avg_len: f64,
    pub doc_freq: HashMap<String, usize>,
}

impl CorpusStats {
    pub fn from_docs<'a, I: IntoIterator<Item = &'a DocTerms>>(docs: I) -> Self {
        let mut s = CorpusStats::default();
        let mut total = 0u64;
        for d in docs {
            s.doc_count += 1;
            total += u64::from(d.len);
            for t in d.tf.keys() {
                *s.doc_freq.entry(t.clone()).or_insert(0) += 1;
            }
        }
        s.avg_len = if s.doc_count == 0 { 0.0 } else { total as f64 / s.doc_count as f64 };
        s
    }

    /// Non-negative IDF: ln(1 + (N - df + 0.5) / (df + 0.5)).
    pub fn idf(&self, term: &str) -> f64 {
        let df = self.doc_freq.get(term).copied().unwrap_or(0) as f64;
        let n = self.doc_count as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }
}

pub fn bm25_score<S: AsRef<str>>(query_terms: &[S], doc: &DocTerms, stats: &CorpusStats, p: Bm25Params) -> f64 {
    let mut seen = HashSet::new();
    let norm = if stats.avg_len > 0.0 { f64::from(doc.len) / stats.avg_len } else { 0.0 };
    query_terms
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .map(|t| {
            let tf = f64::from(doc.tf.get(t).copied().unwrap_or(0));
            if tf == 0.0 {
                return 0.0;
            }
            stats.idf(t) * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm))
        })
        .sum()
}

/// Name-keyed BM25 index.
#[derive(Debug, Clone, Default)]
pub struct Bm25Index {
    docs: BTreeMap<String, DocTerms>,
    stats: CorpusStats,
    params: Bm25Params,
}

impl Bm25Index {
    pub fn new(params: Bm25Params) -> Self {
        Bm25Index { params, ..Default::default() }
    }

    pub fn upsert(&mut self, name: &str, text: &str) {
        self.docs.insert(name.to_string(), DocTerms::from_text(text));
        self.stats = CorpusStats::from_docs(self.docs.values());
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Documents with positive score, best first, ties by name.
    pub fn search(&self, query: &str, top_n: usize) -> Vec<(String, f64)> {
        let terms = tokenize(query);
        let mut hits: Vec<(String, f64)> = self
            .docs
            .iter()
            .map(|(name, d)| (name.clone(), bm25_score(&terms, d, &self.stats, self.params)))
            .filter(|(_, s)| *s > 0.0)
            .collect();
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(top_n);
        hits
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absent_term_contributes_nothing() {
        let docs = [DocTerms::from_text("alpha beta"), DocTerms::from_text("gamma")];
        let stats = CorpusStats::from_docs(&docs);
        assert_eq!(bm25_score(&["delta"], &docs[0], &stats, Bm25Params::default()), 0.0);
    }

    #[test]
    fn single_doc_closed_form() {
        // N = 1, df = 1: idf = ln(1 + 0.5 / 1.5) = ln(4/3).
        // tf = 1, |d| = avgdl: 1 * 2.2 / (1 + 1.2) = 1.
        let doc = DocTerms::from_text("alpha");
        let stats = CorpusStats::from_docs([&doc]);
        let s = bm25_score(&["alpha"], &doc, &stats, Bm25Params::default());
        assert!((s - (4.0f64 / 3.0).ln()).abs() < 1e-12);

        // tf = 3 in a 3-token doc: 3 * 2.2 / (3 + 1.2) = 6.6 / 4.2.
        let doc = DocTerms::from_text("alpha alpha alpha");
        let stats = CorpusStats::from_docs([&doc]);
        let s = bm25_score(&["alpha"], &doc, &stats, Bm25Params::default());
        assert!((s - (4.0f64 / 3.0).ln() * 6.6 / 4.2).abs() < 1e-12);
    }

    #[test]
    fn locality_of_absent_terms() {
        let a = DocTerms::from_text("alpha beta");
        let b1 = DocTerms::from_text("gamma omega");
        let b2 = DocTerms::from_text("gamma gamma");
        let s1 = bm25_score(&["alpha"], &a, &CorpusStats::from_docs([&a, &b1]), Bm25Params::default());
        let s2 = bm25_score(&["alpha"], &a, &CorpusStats::from_docs([&a, &b2]), Bm25Params::default());
        assert_eq!(s1, s2);
    }

    #[test]
    fn index_search_orders() {
        let mut idx = Bm25Index::new(Bm25Params::default());
        idx.upsert("tour-dates", "extract concert dates from tour pages");
        idx.upsert("paper-list", "list research papers");
        let hits = idx.search("concert dates", 5);
        assert_eq!(hits.len(), 1);
        assert_eq!(hits[0].0, "tour-dates");
    }
}
