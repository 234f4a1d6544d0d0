//! Top-k ranking metrics with binary relevance.

use std::collections::BTreeSet;

/// Fraction of the first k ranked items that are relevant.
pub fn precision_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|item| relevant.contains(item))
        .count();
    hits as f64 / k as f64
}

/// Fraction of relevant items found in the first k.
pub fn recall_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(k)
        .filter(|item| relevant.contains(item))
        .count();
    hits as f64 / relevant.len() as f64
}

/// NDCG@k with binary gains; the ideal DCG places one relevant item at each
/// of the first min(|relevant|, k) positions.
pub fn ndcg_at_k(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> f64 {
    if relevant.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, item)| relevant.contains(item))
        .map(|(pos, _)| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..relevant.len().min(k))
        .map(|pos| 1.0 / ((pos + 2) as f64).log2())
        .sum();
    dcg / ideal
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MetricTriple {
    pub precision: f64,
    pub recall: f64,
    pub ndcg: f64,
}

pub fn evaluate_ranking(ranked: &[u32], relevant: &BTreeSet<u32>, k: usize) -> MetricTriple {
    MetricTriple {
        precision: precision_at_k(ranked, relevant, k),
        recall: recall_at_k(ranked, relevant, k),
        ndcg: ndcg_at_k(ranked, relevant, k),
    }
}
