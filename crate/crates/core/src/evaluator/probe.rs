//! Attribute probe: how well a fresh classifier recovers a user's sensitive
//! attribute from the news recommended to them.

use std::collections::BTreeMap;
use std::rc::Rc;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{accuracy, confusion_matrix, macro_f};
use crate::autograd::Graph;
use crate::datagen::{EncodedTitle, NewsId, UserId};
use crate::encoders::{AttentivePooling, EncoderConfig, NewsEncoder};
use crate::error::{Error, Result};
use crate::fairrec::AttributeHead;
use crate::params::{Adam, AdamConfig, ParamStore};
use crate::rng::{stream_rng, streams, Rng};
use crate::trainer::PreparedData;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
    /// Down-sample every class to the size of the smallest.
    pub balance: bool,
    /// 1 evaluates a single user split. With `n > 1` the balanced users are
    /// cut into `n` folds and every fold serves once as test set, the next
    /// one as validation set, pooling test predictions over folds.
    pub folds: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub encoder: EncoderConfig,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            test_fraction: 0.1,
            balance: true,
            folds: 1,
            epochs: 10,
            batch_size: 32,
            adam: AdamConfig {
                learning_rate: 2e-3,
                ..AdamConfig::default()
            },
            encoder: EncoderConfig::desk(),
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let sum = self.train_fraction + self.val_fraction + self.test_fraction;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("probe fractions sum to {sum}, not 1")));
        }
        if self.folds == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("probe folds, epochs and batch size must be positive".into()));
        }
        if self.folds == 2 {
            return Err(Error::InvalidConfig("probe folds must be 1 or at least 3".into()));
        }
        self.encoder.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeExample {
    pub user_id: UserId,
    pub news: Vec<NewsId>,
    pub label: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbeSplits {
    pub train: Vec<ProbeExample>,
    pub validation: Vec<ProbeExample>,
    pub test: Vec<ProbeExample>,
}

/// Balanced, user-disjoint probe folds. Each class is shuffled with the
/// probe seed, cut to the minority size when balancing, and dealt round
/// robin into `folds` buckets so every bucket is class balanced.
pub fn balanced_folds(
    rankings: &[(UserId, Vec<NewsId>)],
    labels: &BTreeMap<UserId, usize>,
    num_classes: usize,
    folds: usize,
    config: &ProbeConfig,
) -> Result<Vec<Vec<ProbeExample>>> {
    let mut by_class: Vec<Vec<ProbeExample>> = vec![Vec::new(); num_classes];
    for (user, news) in rankings {
        if let Some(&label) = labels.get(user) {
            if label >= num_classes {
                return Err(Error::InvalidInput(format!("label {label} out of range")));
            }
            by_class[label].push(ProbeExample {
                user_id: *user,
                news: news.clone(),
                label,
            });
        }
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::InvalidInput(format!("attribute class {c} has no users")));
    }
    let mut rng = stream_rng(config.seed, streams::PROBE);
    let keep = by_class.iter().map(Vec::len).min().unwrap();
    let mut buckets = vec![Vec::new(); folds];
    let mut next = 0;
    for mut class in by_class {
        class.sort_by_key(|e| e.user_id);
        class.shuffle(&mut rng);
        if config.balance {
            class.truncate(keep);
        }
        for example in class {
            buckets[next % folds].push(example);
            next += 1;
        }
    }
    for b in &mut buckets {
        b.shuffle(&mut rng);
    }
    Ok(buckets)
}

/// Single 80/10/10 user split of the balanced probe set.
pub fn build_probe_dataset(
    rankings: &[(UserId, Vec<NewsId>)],
    labels: &BTreeMap<UserId, usize>,
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeSplits> {
    config.validate()?;
    let buckets = balanced_folds(rankings, labels, num_classes, 1, config)?;
    let mut splits = ProbeSplits::default();
    // Stratify: cut each class separately.
    let mut by_class: BTreeMap<usize, Vec<ProbeExample>> = BTreeMap::new();
    for e in buckets.into_iter().flatten() {
        by_class.entry(e.label).or_default().push(e);
    }
    for (_, class) in by_class {
        let n = class.len();
        let n_train = (n as f64 * config.train_fraction).round() as usize;
        let n_val = (n as f64 * config.val_fraction).round() as usize;
        for (i, e) in class.into_iter().enumerate() {
            if i < n_train {
                splits.train.push(e);
            } else if i < n_train + n_val {
                splits.validation.push(e);
            } else {
                splits.test.push(e);
            }
        }
    }
    Ok(splits)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    /// Percent.
    pub accuracy: f64,
    /// Percent.
    pub macro_f: f64,
    pub confusion: Vec<Vec<usize>>,
    pub best_val_accuracy: f64,
    /// Best validation accuracy stayed under 45%.
    pub non_convergent: bool,
    pub test_users: usize,
}

struct ProbeModel {
    news: NewsEncoder,
    pooling: AttentivePooling,
    head: AttributeHead,
}

impl ProbeModel {
    fn new(store: &mut ParamStore, vocab_size: usize, classes: usize, config: &EncoderConfig, rng: &mut Rng) -> Self {
        Self {
            news: NewsEncoder::new(store, "probe.news", vocab_size, config, rng),
            pooling: AttentivePooling::new(
                store,
                "probe.pooling",
                config.model_dim(),
                config.attention_query_dim,
                rng,
            ),
            head: AttributeHead::new(store, "probe.head", config.model_dim(), classes, rng),
        }
    }

    /// Logits for a batch of examples that all list `k` news.
    fn logits(&self, g: &mut Graph, titles: &[&EncodedTitle], k: usize, rng: Option<&mut Rng>) -> crate::autograd::Var {
        let news = self.news.forward(g, titles, rng);
        let user = self.pooling.forward(g, news, k, Rc::from(vec![true; titles.len()]));
        self.head.logits(g, user)
    }

    fn predict(&self, store: &ParamStore, data: &PreparedData, examples: &[ProbeExample]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(examples.len());
        for chunk in examples.chunks(128) {
            let (titles, k) = gather_titles(data, chunk)?;
            let mut g = Graph::new(store);
            let logits = self.logits(&mut g, &titles, k, None);
            for row in g.value(logits).rows() {
                let best = (0..row.len())
                    .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                    .unwrap();
                out.push(best);
            }
        }
        Ok(out)
    }
}

fn gather_titles<'a>(data: &'a PreparedData, examples: &[ProbeExample]) -> Result<(Vec<&'a EncodedTitle>, usize)> {
    let k = examples.first().map_or(0, |e| e.news.len());
    let mut titles = Vec::with_capacity(examples.len() * k);
    for e in examples {
        if e.news.len() != k || k == 0 {
            return Err(Error::InvalidInput("probe examples must list the same nonzero number of news".into()));
        }
        for &n in &e.news {
            titles.push(&data.titles[data.news_row(n)?]);
        }
    }
    Ok((titles, k))
}

fn eval_accuracy(
    model: &ProbeModel,
    store: &ParamStore,
    data: &PreparedData,
    examples: &[ProbeExample],
    classes: usize,
) -> Result<(f64, Vec<Vec<usize>>)> {
    let predicted = model.predict(store, data, examples)?;
    let truth: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let confusion = confusion_matrix(&truth, &predicted, classes);
    Ok((accuracy(&confusion), confusion))
}

/// Train a fresh probe on `splits.train`, keep the epoch with the best
/// validation accuracy, and score it on `splits.test`. The recommender is
/// never touched: the probe owns its own parameter store.
pub fn fairness_probe(splits: &ProbeSplits, data: &PreparedData, num_classes: usize, config: &ProbeConfig) -> Result<ProbeResult> {
    config.validate()?;
    if splits.train.is_empty() || splits.validation.is_empty() || splits.test.is_empty() {
        return Err(Error::EmptySplit("probe"));
    }
    let mut rng = stream_rng(config.seed, streams::PROBE ^ 0xff);
    let mut store = ParamStore::new();
    let model = ProbeModel::new(&mut store, data.vocab.len(), num_classes, &config.encoder, &mut rng);
    let mut adam = Adam::new(config.adam, &store);
    let mut order: Vec<usize> = (0..splits.train.len()).collect();
    let mut best = (f64::NEG_INFINITY, store.clone());
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<ProbeExample> = chunk.iter().map(|&i| splits.train[i].clone()).collect();
            let (titles, k) = gather_titles(data, &batch)?;
            let grads = {
                let mut g = Graph::new(&store);
                let logits = model.logits(&mut g, &titles, k, Some(&mut rng));
                let loss = g.class_nll(logits, batch.iter().map(|e| e.label).collect());
                g.backward(loss).params
            };
            adam.step(&mut store, &grads, |_| true);
        }
        let (val, _) = eval_accuracy(&model, &store, data, &splits.validation, num_classes)?;
        if val > best.0 {
            best = (val, store.clone());
        }
    }
    let (best_val, store) = best;
    let (acc, confusion) = eval_accuracy(&model, &store, data, &splits.test, num_classes)?;
    Ok(ProbeResult {
        accuracy: acc,
        macro_f: macro_f(&confusion),
        confusion,
        best_val_accuracy: best_val,
        non_convergent: best_val < 45.0,
        test_users: splits.test.len(),
    })
}

/// Probe accuracy and macro-F pooled over rotated folds (or a single split
/// when `config.folds == 1`).
pub fn probe_rankings(
    rankings: &[(UserId, Vec<NewsId>)],
    labels: &BTreeMap<UserId, usize>,
    data: &PreparedData,
    num_classes: usize,
    config: &ProbeConfig,
) -> Result<ProbeResult> {
    config.validate()?;
    if config.folds == 1 {
        let splits = build_probe_dataset(rankings, labels, num_classes, config)?;
        return fairness_probe(&splits, data, num_classes, config);
    }
    let buckets = balanced_folds(rankings, labels, num_classes, config.folds, config)?;
    let mut confusion = vec![vec![0; num_classes]; num_classes];
    let mut val_sum = 0.0;
    let mut non_convergent = false;
    for f in 0..config.folds {
        let v = (f + 1) % config.folds;
        let splits = ProbeSplits {
            test: buckets[f].clone(),
            validation: buckets[v].clone(),
            train: (0..config.folds)
                .filter(|&i| i != f && i != v)
                .flat_map(|i| buckets[i].iter().cloned())
                .collect(),
        };
        let fold_config = ProbeConfig {
            seed: config.seed.wrapping_add(f as u64),
            ..config.clone()
        };
        let r = fairness_probe(&splits, data, num_classes, &fold_config)?;
        for (row, add) in confusion.iter_mut().zip(&r.confusion) {
            for (c, a) in row.iter_mut().zip(add) {
                *c += a;
            }
        }
        val_sum += r.best_val_accuracy;
        non_convergent |= r.non_convergent;
    }
    Ok(ProbeResult {
        accuracy: accuracy(&confusion),
        macro_f: macro_f(&confusion),
        test_users: confusion.iter().flatten().sum(),
        confusion,
        best_val_accuracy: val_sum / config.folds as f64,
        non_convergent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rankings(sizes: &[usize]) -> (Vec<(UserId, Vec<NewsId>)>, BTreeMap<UserId, usize>) {
        let mut r = Vec::new();
        let mut l = BTreeMap::new();
        let mut id = 0;
        for (class, &n) in sizes.iter().enumerate() {
            for _ in 0..n {
                r.push((UserId(id), vec![NewsId(id)]));
                l.insert(UserId(id), class);
                id += 1;
            }
        }
        (r, l)
    }

    #[test]
    fn majority_is_downsampled_to_minority() {
        let (r, l) = rankings(&[2484, 1744]);
        let s = build_probe_dataset(&r, &l, 2, &ProbeConfig::default()).unwrap();
        let all: Vec<&ProbeExample> = s.train.iter().chain(&s.validation).chain(&s.test).collect();
        assert_eq!(all.len(), 2 * 1744);
        assert_eq!(all.iter().filter(|e| e.label == 0).count(), 1744);
        let total = all.len() as f64;
        assert!((s.train.len() as f64 / total - 0.8).abs() < 0.01);
        assert!((s.test.len() as f64 / total - 0.1).abs() < 0.01);
    }

    #[test]
    fn balanced_input_keeps_everyone_and_split_is_deterministic() {
        let (r, l) = rankings(&[30, 30]);
        let config = ProbeConfig::default();
        let a = build_probe_dataset(&r, &l, 2, &config).unwrap();
        let b = build_probe_dataset(&r, &l, 2, &config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.len() + a.validation.len() + a.test.len(), 60);
    }

    #[test]
    fn empty_class_is_an_error() {
        let (r, l) = rankings(&[30, 0]);
        assert!(build_probe_dataset(&r, &l, 2, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn folds_are_balanced_and_disjoint() {
        let (r, l) = rankings(&[53, 40]);
        let folds = balanced_folds(&r, &l, 2, 10, &ProbeConfig::default()).unwrap();
        let mut ids: Vec<UserId> = folds.iter().flatten().map(|e| e.user_id).collect();
        assert_eq!(ids.len(), 80);
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 80);
        for f in &folds {
            let ones = f.iter().filter(|e| e.label == 1).count();
            assert!(ones.abs_diff(f.len() - ones) <= 1);
        }
    }
}
