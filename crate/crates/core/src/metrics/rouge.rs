//! Token-level ROUGE-N and summary-level ROUGE-L (F-measure with β = 1).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }

    /// Builds a score from a match count and the two sequence-side totals.
    pub fn from_counts(matches: usize, hyp_total: usize, ref_total: usize) -> Self {
        if hyp_total == 0 || ref_total == 0 {
            return RougeScore::default();
        }
        // F1 = 2m / (|hyp| + |ref|) as a single division, so equal
        // count triples always give bit-identical scores.
        RougeScore {
            precision: matches as f64 / hyp_total as f64,
            recall: matches as f64 / ref_total as f64,
            f1: (2 * matches) as f64 / (hyp_total + ref_total) as f64,
        }
    }
}

/// `(clipped overlap, hypothesis n-grams, reference n-grams)`.
pub fn ngram_counts(hyp: &[usize], reference: &[usize], n: usize) -> (usize, usize, usize) {
    if n == 0 || hyp.len() < n || reference.len() < n {
        return (
            0,
            hyp.len().saturating_sub(n.max(1) - 1),
            reference.len().saturating_sub(n.max(1) - 1),
        );
    }
    let mut ref_counts: HashMap<&[usize], usize> = HashMap::new();
    for g in reference.windows(n) {
        *ref_counts.entry(g).or_default() += 1;
    }
    let mut overlap = 0;
    for g in hyp.windows(n) {
        if let Some(c) = ref_counts.get_mut(g) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    (overlap, hyp.len() - n + 1, reference.len() - n + 1)
}

/// Clipped n-gram overlap. An empty side, or `n == 0`, scores zero.
pub fn rouge_n(hyp: &[usize], reference: &[usize], n: usize) -> RougeScore {
    if n == 0 {
        return RougeScore::default();
    }
    let (m, h, r) = ngram_counts(hyp, reference, n);
    RougeScore::from_counts(m, h, r)
}

/// Length of the longest common subsequence, `O(|a|·|b|)` time.
pub fn lcs_len(a: &[usize], b: &[usize]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for &x in a {
        for (j, &y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l(hyp: &[usize], reference: &[usize]) -> RougeScore {
    RougeScore::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}
