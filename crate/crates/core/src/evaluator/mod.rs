//! Recommendation metrics and the attribute-probe fairness audit.

pub mod metrics;
pub mod probe;
pub mod ranking;
pub mod report;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use metrics::{accuracy, auc, confusion_matrix, macro_f, mrr, ndcg, ranking_order, rec_metrics, RecMetrics};
pub use probe::{
    balanced_folds, build_probe_dataset, fairness_probe, probe_rankings, ProbeConfig, ProbeExample, ProbeResult,
    ProbeSplits,
};
pub use ranking::{
    evaluate_sessions, random_rankings, rank_full_candidates, rank_users, session_scores, top_k, ModelSnapshot, Ranked,
    ScoringMode,
};
pub use report::{fairness_csv, performance_csv, ReportRecord};

use crate::datagen::UserId;
use crate::error::Result;
use crate::trainer::PreparedData;

/// Cutoffs reported by the fairness audit.
pub const PROBE_KS: [usize; 4] = [1, 3, 5, 10];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeScores {
    pub accuracy: f64,
    pub macro_f: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub k: usize,
    pub probe_accuracy: f64,
    pub probe_macro_f: f64,
    pub reference_random: ProbeScores,
    pub non_convergent: bool,
    pub test_users: usize,
}

/// Labeled users as `(row, id, label)`.
pub fn labeled_users(data: &PreparedData) -> (Vec<usize>, BTreeMap<UserId, usize>) {
    let mut rows = Vec::new();
    let mut labels = BTreeMap::new();
    for (row, attr) in data.attributes.iter().enumerate() {
        if let Some(a) = attr {
            rows.push(row);
            labels.insert(data.user_ids[row], *a);
        }
    }
    (rows, labels)
}

/// Probe the model's top-`k` lists for every labeled user.
pub fn probe_model(
    snap: &ModelSnapshot,
    data: &PreparedData,
    k: usize,
    mode: ScoringMode,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    let (rows, labels) = labeled_users(data);
    let ids: Vec<UserId> = rows.iter().map(|&r| data.user_ids[r]).collect();
    let ranked = rank_users(snap, data, &rows, k, mode)?;
    let lists: Vec<_> = ids.into_iter().zip(ranked).collect();
    probe_rankings(&lists, &labels, data, data.num_classes, config)
}

/// The same probe on uniformly random top-`k` lists.
pub fn probe_random(data: &PreparedData, k: usize, config: &ProbeConfig) -> Result<ProbeResult> {
    let (rows, labels) = labeled_users(data);
    let lists: Vec<_> = rows
        .iter()
        .map(|&r| data.user_ids[r])
        .zip(random_rankings(data, rows.len(), k, config.seed))
        .collect();
    probe_rankings(&lists, &labels, data, data.num_classes, config)
}

pub fn fairness_report_from(k: usize, model: &ProbeResult, random: &ProbeResult) -> FairnessReport {
    FairnessReport {
        k,
        probe_accuracy: model.accuracy,
        probe_macro_f: model.macro_f,
        reference_random: ProbeScores {
            accuracy: random.accuracy,
            macro_f: random.macro_f,
        },
        non_convergent: model.non_convergent,
        test_users: model.test_users,
    }
}

/// Probe the model's top-`k` lists and a random-ranking reference.
pub fn fairness_report(
    snap: &ModelSnapshot,
    data: &PreparedData,
    k: usize,
    mode: ScoringMode,
    config: &ProbeConfig,
) -> Result<FairnessReport> {
    let model = probe_model(snap, data, k, mode, config)?;
    let random = probe_random(data, k, config)?;
    Ok(fairness_report_from(k, &model, &random))
}
