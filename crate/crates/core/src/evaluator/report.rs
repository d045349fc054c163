//! Structured report records and CSV tables rendered from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

/// One line of a metrics report. Fields that do not apply are `None`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub mode: String,
    #[serde(rename = "K")]
    pub k: Option<usize>,
    pub accuracy: Option<f64>,
    pub macro_f: Option<f64>,
    pub auc: Option<f64>,
    pub mrr: Option<f64>,
    pub ndcg5: Option<f64>,
    pub ndcg10: Option<f64>,
    pub seed: u64,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cell(xs: &[f64], scale: f64) -> String {
    if xs.is_empty() {
        return String::new();
    }
    let (m, s) = mean_std(xs);
    format!("{:.2}±{:.2}", m * scale, s * scale)
}

/// Rows per mode; columns accuracy and macro-F at each K, mean±std over
/// seeds.
pub fn fairness_csv(records: &[ReportRecord]) -> String {
    let mut ks: Vec<usize> = records.iter().filter_map(|r| r.k).collect();
    ks.sort_unstable();
    ks.dedup();
    let mut out = String::from("method");
    for k in &ks {
        write!(out, ",accuracy@{k},macro_f@{k}").unwrap();
    }
    out.push('\n');
    let mut modes: BTreeMap<&str, Vec<&ReportRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.accuracy.is_some()) {
        modes.entry(&r.mode).or_default().push(r);
    }
    for (mode, rs) in modes {
        out.push_str(mode);
        for &k in &ks {
            let at_k: Vec<&&ReportRecord> = rs.iter().filter(|r| r.k == Some(k)).collect();
            let acc: Vec<f64> = at_k.iter().filter_map(|r| r.accuracy).collect();
            let f: Vec<f64> = at_k.iter().filter_map(|r| r.macro_f).collect();
            write!(out, ",{},{}", cell(&acc, 1.0), cell(&f, 1.0)).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Rows per mode; AUC, MRR, nDCG@5, nDCG@10 in percent, mean±std over seeds.
pub fn performance_csv(records: &[ReportRecord]) -> String {
    let mut out = String::from("method,auc,mrr,ndcg5,ndcg10\n");
    let mut modes: BTreeMap<&str, Vec<&ReportRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.auc.is_some()) {
        modes.entry(&r.mode).or_default().push(r);
    }
    for (mode, rs) in modes {
        let col = |f: fn(&ReportRecord) -> Option<f64>| -> Vec<f64> { rs.iter().filter_map(|r| f(r)).collect() };
        writeln!(
            out,
            "{mode},{},{},{},{}",
            cell(&col(|r| r.auc), 100.0),
            cell(&col(|r| r.mrr), 100.0),
            cell(&col(|r| r.ndcg5), 100.0),
            cell(&col(|r| r.ndcg10), 100.0),
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_aggregate_over_seeds() {
        let rec = |seed, acc: f64| ReportRecord {
            mode: "baseline".into(),
            k: Some(10),
            accuracy: Some(acc),
            macro_f: Some(acc - 1.0),
            seed,
            ..Default::default()
        };
        let csv = fairness_csv(&[rec(0, 60.0), rec(1, 62.0)]);
        assert_eq!(csv, "method,accuracy@10,macro_f@10\nbaseline,61.00±1.41,60.00±1.41\n");
        let perf = performance_csv(&[ReportRecord {
            mode: "fairrec".into(),
            auc: Some(0.6),
            mrr: Some(0.3),
            ndcg5: Some(0.35),
            ndcg10: Some(0.4),
            ..Default::default()
        }]);
        assert_eq!(perf, "method,auc,mrr,ndcg5,ndcg10\nfairrec,60.00±0.00,30.00±0.00,35.00±0.00,40.00±0.00\n");
    }
}
