//! Per-session ranking metrics and classification scores.

use serde::{Deserialize, Serialize};

/// Indices of `scores` in descending score order; ties keep input order.
pub fn ranking_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// Mann–Whitney AUC with half credit for ties. `None` unless both classes
/// are present.
pub fn auc(scores: &[f64], labels: &[u8]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Midranks (1-based) over tie blocks.
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += midrank * order[i..=j].iter().filter(|&&k| labels[k] == 1).count() as f64;
        i = j + 1;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

/// Mean reciprocal rank over the clicked items.
pub fn mrr(scores: &[f64], labels: &[u8]) -> Option<f64> {
    let clicked = labels.iter().filter(|&&l| l == 1).count();
    if clicked == 0 {
        return None;
    }
    let total: f64 = ranking_order(scores)
        .iter()
        .enumerate()
        .filter(|(_, &i)| labels[i] == 1)
        .map(|(rank, _)| 1.0 / (rank + 1) as f64)
        .sum();
    Some(total / clicked as f64)
}

/// nDCG@k with binary gains and log2 discounts.
pub fn ndcg(scores: &[f64], labels: &[u8], k: usize) -> Option<f64> {
    let clicked = labels.iter().filter(|&&l| l == 1).count();
    if clicked == 0 {
        return None;
    }
    let discount = |rank: usize| 1.0 / ((rank + 2) as f64).log2();
    let dcg: f64 = ranking_order(scores)
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| labels[i] == 1)
        .map(|(rank, _)| discount(rank))
        .sum();
    let ideal: f64 = (0..clicked.min(k)).map(discount).sum();
    Some(dcg / ideal)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RecMetrics {
    pub auc: f64,
    pub mrr: f64,
    pub ndcg5: f64,
    pub ndcg10: f64,
    pub sessions: usize,
    /// Sessions without both a click and a non-click.
    pub skipped: usize,
}

/// Mean metrics over sessions given per-session scores and labels.
pub fn rec_metrics(scores: &[Vec<f64>], labels: &[Vec<u8>]) -> RecMetrics {
    assert_eq!(scores.len(), labels.len());
    let mut m = RecMetrics::default();
    for (s, l) in scores.iter().zip(labels) {
        let Some(a) = auc(s, l) else {
            m.skipped += 1;
            continue;
        };
        m.auc += a;
        m.mrr += mrr(s, l).unwrap();
        m.ndcg5 += ndcg(s, l, 5).unwrap();
        m.ndcg10 += ndcg(s, l, 10).unwrap();
        m.sessions += 1;
    }
    if m.sessions > 0 {
        let n = m.sessions as f64;
        m.auc /= n;
        m.mrr /= n;
        m.ndcg5 /= n;
        m.ndcg10 /= n;
    }
    m
}

/// `confusion[truth][prediction]` counts.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut c = vec![vec![0; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        c[t][p] += 1;
    }
    c
}

/// Accuracy in percent.
pub fn accuracy(confusion: &[Vec<usize>]) -> f64 {
    let total: usize = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let correct: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    100.0 * correct as f64 / total as f64
}

/// Unweighted mean of per-class F1, in percent. A class with zero
/// precision and recall scores 0.
pub fn macro_f(confusion: &[Vec<usize>]) -> f64 {
    let classes = confusion.len();
    if classes == 0 {
        return 0.0;
    }
    let total: f64 = (0..classes)
        .map(|c| {
            let tp = confusion[c][c] as f64;
            let predicted: usize = confusion.iter().map(|row| row[c]).sum();
            let actual: usize = confusion[c].iter().sum();
            if predicted + actual == 0 {
                return 0.0;
            }
            2.0 * tp / (predicted + actual) as f64
        })
        .sum();
    100.0 * total / classes as f64
}
