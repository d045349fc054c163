//! Negative sampling, batching, the optimization loop, and checkpoints.

mod checkpoint;
mod config;

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::datagen::{
    encode_title, DatasetSplit, EncodedTitle, ImpressionSession, NewsArticle, NewsId, UserId,
    UserRecord, Vocab,
};
use crate::encoders::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluator::{self, ModelSnapshot, ScoringMode};
use crate::fairrec::{orthogonality_loss, BatchInput, FairRecModel, LossBreakdown};
use crate::params::{Adam, ParamStore};
use crate::rng::{stream_rng, streams, Rng};

pub use checkpoint::{Checkpoint, NamedTensor, CHECKPOINT_VERSION};
pub use config::TrainConfig;

/// Corpus tables indexed for training: encoded titles, recent histories and
/// attribute labels.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub vocab: Vocab,
    pub titles: Vec<EncodedTitle>,
    pub news_ids: Vec<NewsId>,
    pub news_index: HashMap<NewsId, usize>,
    pub user_ids: Vec<UserId>,
    pub user_index: HashMap<UserId, usize>,
    /// Per user: news rows of the most recent clicks, oldest first.
    pub histories: Vec<Vec<usize>>,
    pub attributes: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl PreparedData {
    pub fn new(news: &[NewsArticle], users: &[UserRecord], encoder: &EncoderConfig, min_count: usize) -> Result<Self> {
        Self::with_vocab(news, users, encoder, Vocab::build(news, min_count))
    }

    pub fn with_vocab(news: &[NewsArticle], users: &[UserRecord], encoder: &EncoderConfig, vocab: Vocab) -> Result<Self> {
        if news.is_empty() || users.is_empty() {
            return Err(Error::InvalidInput("empty news or user set".into()));
        }
        let news_index: HashMap<NewsId, usize> = news.iter().enumerate().map(|(i, n)| (n.id, i)).collect();
        let titles = news
            .iter()
            .map(|n| encode_title(&n.tokens, &vocab, encoder.max_title_len))
            .collect();
        let mut histories = Vec::with_capacity(users.len());
        for u in users {
            let mut rows = Vec::with_capacity(u.clicks.len());
            for c in &u.clicks {
                let row = news_index.get(&c.news_id).ok_or_else(|| {
                    Error::InvalidInput(format!("user {} clicked unknown news {}", u.id.0, c.news_id.0))
                })?;
                rows.push(*row);
            }
            let start = rows.len().saturating_sub(encoder.max_history_len);
            histories.push(rows.split_off(start));
        }
        let num_classes = users
            .iter()
            .filter_map(|u| u.attribute)
            .max()
            .map_or(2, |m| (m + 1).max(2));
        Ok(Self {
            vocab,
            titles,
            news_ids: news.iter().map(|n| n.id).collect(),
            news_index,
            user_ids: users.iter().map(|u| u.id).collect(),
            user_index: users.iter().enumerate().map(|(i, u)| (u.id, i)).collect(),
            histories,
            attributes: users.iter().map(|u| u.attribute).collect(),
            num_classes,
        })
    }

    pub fn user_row(&self, id: UserId) -> Result<usize> {
        self.user_index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown user {}", id.0)))
    }

    pub fn news_row(&self, id: NewsId) -> Result<usize> {
        self.news_index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown news {}", id.0)))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSample {
    pub user_id: UserId,
    pub clicked: NewsId,
    pub negatives: Vec<NewsId>,
}

/// One sample per clicked candidate, each with `t` non-clicked candidates of
/// the same session: without replacement when enough exist, otherwise drawn
/// with replacement. `None` when the session has no non-clicked candidate.
pub fn sample_negatives(session: &ImpressionSession, t: usize, rng: &mut Rng) -> Option<Vec<TrainingSample>> {
    let pool: Vec<NewsId> = session
        .candidates
        .iter()
        .filter(|c| c.label == 0)
        .map(|c| c.news_id)
        .collect();
    if pool.is_empty() {
        return None;
    }
    let samples = session
        .candidates
        .iter()
        .filter(|c| c.label == 1)
        .map(|c| {
            let negatives = if pool.len() >= t {
                rand::seq::index::sample(rng, pool.len(), t)
                    .into_iter()
                    .map(|i| pool[i])
                    .collect()
            } else {
                (0..t).map(|_| pool[rng.gen_range(0..pool.len())]).collect()
            };
            TrainingSample {
                user_id: session.user_id,
                clicked: c.news_id,
                negatives,
            }
        })
        .collect();
    Some(samples)
}

/// Deduplicate news and users of a batch into a [`BatchInput`].
pub fn build_batch<'a>(samples: &[TrainingSample], data: &'a PreparedData) -> Result<BatchInput<'a>> {
    let mut batch = BatchInput::default();
    let mut news_rows: HashMap<usize, usize> = HashMap::new();
    let mut user_rows: HashMap<usize, usize> = HashMap::new();
    let mut local_news = |row: usize, batch: &mut BatchInput<'a>| {
        *news_rows.entry(row).or_insert_with(|| {
            batch.titles.push(&data.titles[row]);
            batch.titles.len() - 1
        })
    };
    for s in samples {
        let user = data.user_row(s.user_id)?;
        let local_user = match user_rows.get(&user) {
            Some(&r) => r,
            None => {
                let history = data.histories[user]
                    .iter()
                    .map(|&n| local_news(n, &mut batch))
                    .collect();
                batch.histories.push(history);
                batch.labels.push(data.attributes[user]);
                user_rows.insert(user, batch.histories.len() - 1);
                batch.histories.len() - 1
            }
        };
        let mut cands = Vec::with_capacity(1 + s.negatives.len());
        cands.push(local_news(data.news_row(s.clicked)?, &mut batch));
        for &n in &s.negatives {
            cands.push(local_news(data.news_row(n)?, &mut batch));
        }
        batch.samples.push((local_user, cands));
    }
    Ok(batch)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    #[serde(rename = "L_R")]
    pub l_r: f64,
    #[serde(rename = "L_G")]
    pub l_g: f64,
    #[serde(rename = "L_D")]
    pub l_d: f64,
    #[serde(rename = "L_A")]
    pub l_a: f64,
    pub val_auc: f64,
    pub val_l_d: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub best_val_l_d: f64,
    pub skipped_sessions: usize,
    pub stopped_early: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ValidationReport {
    pub auc: f64,
    pub l_d: f64,
}

pub struct Trainer<'d> {
    pub config: TrainConfig,
    pub data: &'d PreparedData,
    pub model: FairRecModel,
    pub store: ParamStore,
    pub adam: Adam,
    rng: Rng,
    step: u64,
    epoch: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(config: TrainConfig, data: &'d PreparedData) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut init = stream_rng(config.seed, streams::INIT);
        let model = FairRecModel::new(
            &mut store,
            config.mode,
            data.vocab.len(),
            &config.encoder,
            data.num_classes,
            &mut init,
        )?;
        let adam = Adam::new(config.adam, &store);
        Ok(Self {
            rng: stream_rng(config.seed, streams::TRAIN),
            config,
            data,
            model,
            store,
            adam,
            step: 0,
            epoch: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// One optimization step: forward all losses, back-propagate through the
    /// reversal node, and update encoders, heads and discriminator together.
    pub fn train_step(&mut self, samples: &[TrainingSample]) -> Result<LossBreakdown> {
        if samples.is_empty() {
            return Err(Error::InvalidInput("empty training batch".into()));
        }
        let batch = build_batch(samples, self.data)?;
        let disc = self.model.discriminator_params();

        let (breakdown, mut grads, u_free) = {
            let mut g = Graph::new(&self.store);
            let out = self
                .model
                .forward(&mut g, &batch, self.config.lambdas, Some(&mut self.rng));
            let u_free = g.value(out.u_free).clone();
            let b = out.breakdown;
            if ![b.l_r, b.l_g, b.l_d, b.l_a].iter().all(|x| x.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    step: self.step,
                    detail: format!("{b:?}; batch {samples:?}"),
                });
            }
            (b, g.backward(out.root).params, u_free)
        };
        if !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                step: self.step,
                detail: format!("non-finite gradient; batch {samples:?}"),
            });
        }
        if self.config.grad_clip > 0.0 {
            let norm = grads.global_norm();
            if norm > self.config.grad_clip {
                grads.scale(self.config.grad_clip / norm);
            }
        }
        self.adam.step(&mut self.store, &grads, |_| true);

        // Extra discriminator updates on this batch's (detached) u_d.
        for _ in 0..self.config.adversary_steps {
            let grads = {
                let mut g = Graph::new(&self.store);
                let Some(loss) = self.model.discriminator_loss(&mut g, u_free.clone(), &batch.labels) else {
                    break;
                };
                g.backward(loss).params
            };
            self.adam.step(&mut self.store, &grads, |id| disc.contains(&id));
        }
        self.step += 1;
        Ok(breakdown)
    }

    pub fn snapshot(&self) -> ModelSnapshot {
        ModelSnapshot::new(&self.model, &self.store, self.data)
    }

    /// Validation AUC under bias-free scoring, and mean |cos(u_b, u_d)|
    /// over the users of `sessions`.
    pub fn validate(&self, sessions: &[ImpressionSession]) -> Result<ValidationReport> {
        let snap = self.snapshot();
        let metrics = evaluator::evaluate_sessions(&snap, self.data, sessions, ScoringMode::BiasFree)?;
        let mut users: Vec<usize> = sessions
            .iter()
            .map(|s| self.data.user_row(s.user_id))
            .collect::<Result<_>>()?;
        users.sort_unstable();
        users.dedup();
        let bias = snap.users.bias.select(ndarray::Axis(0), &users);
        let free = snap.users.free.select(ndarray::Axis(0), &users);
        Ok(ValidationReport {
            auc: metrics.auc,
            l_d: orthogonality_loss(&bias, &free),
        })
    }

    /// Samples for one epoch with fresh negatives, shuffled. Returns the
    /// number of sessions skipped for lack of non-clicked candidates.
    pub fn epoch_samples(&mut self, sessions: &[ImpressionSession]) -> (Vec<TrainingSample>, usize) {
        let mut samples = Vec::new();
        let mut skipped = 0;
        for s in sessions {
            match sample_negatives(s, self.config.negative_ratio, &mut self.rng) {
                Some(v) => samples.extend(v),
                None => skipped += 1,
            }
        }
        samples.shuffle(&mut self.rng);
        if self.config.max_batches_per_epoch > 0 {
            samples.truncate(self.config.max_batches_per_epoch * self.config.batch_size);
        }
        (samples, skipped)
    }

    /// Epoch loop with early stopping on validation AUC. The parameters of
    /// the best epoch are restored before returning.
    pub fn fit(&mut self, split: &DatasetSplit) -> Result<TrainOutcome> {
        let mut outcome = TrainOutcome {
            epochs: Vec::new(),
            best_epoch: 0,
            best_val_auc: f64::NEG_INFINITY,
            best_val_l_d: f64::NAN,
            skipped_sessions: 0,
            stopped_early: false,
        };
        let mut best = self.store.clone();
        let mut since_best = 0;
        for epoch in 1..=self.config.epochs {
            let (samples, skipped) = self.epoch_samples(&split.train);
            outcome.skipped_sessions += skipped;
            let mut sums = [0.0; 4];
            let mut batches = 0;
            for chunk in samples.chunks(self.config.batch_size) {
                let b = self.train_step(chunk)?;
                for (s, v) in sums.iter_mut().zip([b.l_r, b.l_g, b.l_d, b.l_a]) {
                    *s += v;
                }
                batches += 1;
            }
            self.epoch = epoch;
            let n = batches.max(1) as f64;
            let val = self.validate(&split.validation)?;
            let record = EpochRecord {
                epoch,
                l_r: sums[0] / n,
                l_g: sums[1] / n,
                l_d: sums[2] / n,
                l_a: sums[3] / n,
                val_auc: val.auc,
                val_l_d: val.l_d,
            };
            log::info!("{}", serde_json::to_string(&record).unwrap_or_default());
            outcome.epochs.push(record);
            if val.auc > outcome.best_val_auc {
                outcome.best_val_auc = val.auc;
                outcome.best_val_l_d = val.l_d;
                outcome.best_epoch = epoch;
                best = self.store.clone();
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= self.config.patience {
                    outcome.stopped_early = true;
                    break;
                }
            }
        }
        self.store = best;
        Ok(outcome)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::new(
            &self.config,
            &self.model,
            &self.store,
            &self.data.vocab,
            &self.rng,
            self.step,
            self.epoch,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::Candidate;

    fn session(labels: &[u8]) -> ImpressionSession {
        ImpressionSession {
            user_id: UserId(0),
            day: 0,
            candidates: labels
                .iter()
                .enumerate()
                .map(|(i, &label)| Candidate {
                    news_id: NewsId(i as u32),
                    label,
                })
                .collect(),
        }
    }

    #[test]
    fn exactly_t_non_clicks_are_all_used() {
        let mut rng = stream_rng(0, 0);
        let s = session(&[1, 0, 0, 0, 0]);
        let samples = sample_negatives(&s, 4, &mut rng).unwrap();
        assert_eq!(samples.len(), 1);
        let mut negs = samples[0].negatives.clone();
        negs.sort();
        assert_eq!(negs, (1..5).map(NewsId).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_non_clicks_are_drawn_with_replacement() {
        let mut rng = stream_rng(1, 0);
        let samples = sample_negatives(&session(&[0, 1, 0]), 4, &mut rng).unwrap();
        assert_eq!(samples[0].negatives.len(), 4);
        assert!(samples[0]
            .negatives
            .iter()
            .all(|n| *n == NewsId(0) || *n == NewsId(2)));
    }

    #[test]
    fn sessions_without_non_clicks_are_skipped() {
        let mut rng = stream_rng(2, 0);
        assert!(sample_negatives(&session(&[1, 1]), 4, &mut rng).is_none());
    }

    #[test]
    fn negatives_are_uniform() {
        let mut rng = stream_rng(3, 0);
        let s = session(&[1, 0, 0, 0, 0, 0, 0, 0]);
        let n = 7.0;
        let draws = 100_000;
        let mut counts = [0usize; 8];
        for _ in 0..draws / 4 {
            for neg in &sample_negatives(&s, 4, &mut rng).unwrap()[0].negatives {
                counts[neg.index()] += 1;
            }
        }
        let total = (draws / 4 * 4) as f64;
        let p = 1.0 / n;
        let sigma = (total * p * (1.0 - p)).sqrt();
        for &c in &counts[1..] {
            assert!((c as f64 - total * p).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
