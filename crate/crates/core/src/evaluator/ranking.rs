//! Scoring impressions and ranking the full news set.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::metrics::{rec_metrics, RecMetrics};
use crate::datagen::{ImpressionSession, NewsId};
use crate::error::{Error, Result};
use crate::fairrec::{FairRecModel, UserMatrix};
use crate::params::ParamStore;
use crate::rng::{stream_rng, streams};
use crate::trainer::PreparedData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMode {
    /// Serving score: bias-free user embedding only.
    BiasFree,
    /// Training score: sum of both user embeddings.
    Unified,
}

/// Inference-mode embeddings of every news item and user of a corpus.
#[derive(Clone, Debug)]
pub struct ModelSnapshot {
    pub news: Array2<f64>,
    pub users: UserMatrix,
}

impl ModelSnapshot {
    pub fn new(model: &FairRecModel, store: &ParamStore, data: &PreparedData) -> Self {
        let news = model.encode_news(store, &data.titles);
        let users = model.encode_users(store, &news, &data.histories);
        Self { news, users }
    }

    pub fn user_vector(&self, row: usize, mode: ScoringMode) -> Array1<f64> {
        match mode {
            ScoringMode::BiasFree => self.users.free.row(row).to_owned(),
            ScoringMode::Unified => &self.users.free.row(row) + &self.users.bias.row(row),
        }
    }
}

/// Scores of each candidate in an impression.
pub fn session_scores(
    snap: &ModelSnapshot,
    data: &PreparedData,
    session: &ImpressionSession,
    mode: ScoringMode,
) -> Result<Vec<f64>> {
    let u = snap.user_vector(data.user_row(session.user_id)?, mode);
    session
        .candidates
        .iter()
        .map(|c| Ok(snap.news.row(data.news_row(c.news_id)?).dot(&u)))
        .collect()
}

pub fn evaluate_sessions(
    snap: &ModelSnapshot,
    data: &PreparedData,
    sessions: &[ImpressionSession],
    mode: ScoringMode,
) -> Result<RecMetrics> {
    let scores = sessions
        .iter()
        .map(|s| session_scores(snap, data, s, mode))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<u8>> = sessions.iter().map(|s| s.labels()).collect();
    Ok(rec_metrics(&scores, &labels))
}

/// Top `k` of `scores` by descending score, ties broken by ascending id.
pub fn top_k(scores: ArrayView1<f64>, ids: &[NewsId], k: usize) -> Vec<NewsId> {
    let cmp = |&a: &usize, &b: &usize| scores[b].total_cmp(&scores[a]).then(ids[a].cmp(&ids[b]));
    let mut order: Vec<usize> = (0..scores.len()).collect();
    if k < order.len() {
        order.select_nth_unstable_by(k, cmp);
        order.truncate(k);
    }
    order.sort_by(cmp);
    order.into_iter().map(|i| ids[i]).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ranked {
    pub news: Vec<NewsId>,
    /// The user had no history; the ranking comes from a zero user vector.
    pub cold_start: bool,
}

/// Rank the whole news set for one user.
pub fn rank_full_candidates(
    snap: &ModelSnapshot,
    data: &PreparedData,
    user_row: usize,
    k: usize,
    mode: ScoringMode,
) -> Result<Ranked> {
    if k > data.news_ids.len() {
        return Err(Error::InvalidInput(format!(
            "k = {k} exceeds the {} available news",
            data.news_ids.len()
        )));
    }
    let scores = snap.news.dot(&snap.user_vector(user_row, mode));
    Ok(Ranked {
        news: top_k(scores.view(), &data.news_ids, k),
        cold_start: snap.users.cold_start[user_row],
    })
}

/// Top-`k` lists for the given users.
pub fn rank_users(
    snap: &ModelSnapshot,
    data: &PreparedData,
    users: &[usize],
    k: usize,
    mode: ScoringMode,
) -> Result<Vec<Vec<NewsId>>> {
    if k > data.news_ids.len() {
        return Err(Error::InvalidInput(format!("k = {k} exceeds the news set")));
    }
    let mut out = Vec::with_capacity(users.len());
    for chunk in users.chunks(256) {
        let u = match mode {
            ScoringMode::BiasFree => snap.users.free.select(Axis(0), chunk),
            ScoringMode::Unified => snap.users.unified().select(Axis(0), chunk),
        };
        let scores = u.dot(&snap.news.t());
        for row in scores.rows() {
            out.push(top_k(row, &data.news_ids, k));
        }
    }
    Ok(out)
}

/// Uniformly random top-`k` lists, one per user, from a dedicated stream.
pub fn random_rankings(data: &PreparedData, users: usize, k: usize, seed: u64) -> Vec<Vec<NewsId>> {
    let mut rng = stream_rng(seed, streams::RANDOM_RANKING);
    (0..users)
        .map(|_| {
            sample(&mut rng, data.news_ids.len(), k.min(data.news_ids.len()))
                .into_iter()
                .map(|i| data.news_ids[i])
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn top_k_breaks_ties_by_id() {
        let ids: Vec<NewsId> = [5, 3, 9, 1].map(NewsId).to_vec();
        let scores = array![0.5, 0.5, 0.9, 0.5];
        assert_eq!(top_k(scores.view(), &ids, 2), vec![NewsId(9), NewsId(1)]);
        assert_eq!(
            top_k(scores.view(), &ids, 4),
            [9, 1, 3, 5].map(NewsId).to_vec()
        );
        let shifted = &scores + 100.0;
        assert_eq!(top_k(shifted.view(), &ids, 3), top_k(scores.view(), &ids, 3));
        let zero = Array1::zeros(4);
        assert_eq!(top_k(zero.view(), &ids, 4), [1, 3, 5, 9].map(NewsId).to_vec());
    }
}
