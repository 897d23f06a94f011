//! Reciprocal rank fusion.

use std::collections::{HashMap, HashSet};

pub const DEFAULT_RRF_K: f64 = 60.0;

/// Sums 1 / (k + rank) over every list containing a document (ranks are
/// 1-based). Output is sorted by score descending, then name ascending.
/// Repeats within one list after the first occurrence are ignored.
pub fn rrf_fuse<S: AsRef<str>>(ranked_lists: &[Vec<S>], k: f64) -> Vec<(String, f64)> {
    let mut scores: HashMap<String, f64> = HashMap::new();
    for list in ranked_lists {
        let mut seen = HashSet::new();
        let mut rank = 0usize;
        for doc in list {
            let doc = doc.as_ref();
            if !seen.insert(doc) {
                continue;
            }
            rank += 1;
            *scores.entry(doc.to_string()).or_insert(0.0) += 1.0 / (k + rank as f64);
        }
    }
    let mut fused: Vec<(String, f64)> = scores.into_iter().collect();
    fused.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    fused
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let fused = rrf_fuse(&[vec!["a", "b", "c"], vec!["x", "y", "a"]], 60.0);
        let a = fused.iter().find(|(d, _)| d == "a").unwrap().1;
        assert!((a - (1.0 / 61.0 + 1.0 / 63.0)).abs() < 1e-12);
        assert!((a - 0.0322665).abs() < 1e-7);
        let x = fused.iter().find(|(d, _)| d == "x").unwrap().1;
        assert!((x - 1.0 / 61.0).abs() < 1e-12);
    }

    #[test]
    fn ties_alphabetical() {
        let fused = rrf_fuse(&[vec!["zeta"], vec!["alpha"]], 60.0);
        assert_eq!(fused[0].0, "alpha");
        assert_eq!(fused[1].0, "zeta");
    }

    #[test]
    fn empty_input() {
        assert!(rrf_fuse::<&str>(&[], 60.0).is_empty());
    }
}
