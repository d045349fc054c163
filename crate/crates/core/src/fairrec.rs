//! The decomposed user model.
//!
//! Two history encoders with disjoint parameters share one news encoder.
//! The bias-aware embedding feeds an attribute predictor; the bias-free one
//! feeds a discriminator through a gradient reversal node and is pushed
//! orthogonal to the bias-aware one. Training scores candidates with the sum
//! of both embeddings, serving with the bias-free embedding alone.

use std::fmt;
use std::rc::Rc;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var, NORM_GUARD};
use crate::datagen::EncodedTitle;
use crate::encoders::{fan_in_uniform, EncoderConfig, HistoryEncoder, NewsEncoder};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "fairrec")]
    FairRec,
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "adversarial_only")]
    AdversarialOnly,
    #[serde(rename = "no_LG")]
    NoLG,
    #[serde(rename = "no_LD")]
    NoLD,
    #[serde(rename = "no_adv")]
    NoAdv,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::FairRec,
        Mode::Baseline,
        Mode::AdversarialOnly,
        Mode::NoLG,
        Mode::NoLD,
        Mode::NoAdv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::FairRec => "fairrec",
            Mode::Baseline => "baseline",
            Mode::AdversarialOnly => "adversarial_only",
            Mode::NoLG => "no_LG",
            Mode::NoLD => "no_LD",
            Mode::NoAdv => "no_adv",
        }
    }

    /// Whether the user model is split into bias-aware and bias-free parts.
    pub fn is_decomposed(self) -> bool {
        !matches!(self, Mode::Baseline | Mode::AdversarialOnly)
    }

    pub fn has_discriminator(self) -> bool {
        self != Mode::Baseline
    }

    /// Loss weights actually applied in this mode.
    pub fn effective(self, l: Lambdas) -> Lambdas {
        match self {
            Mode::FairRec => l,
            Mode::Baseline => Lambdas::zero(),
            Mode::AdversarialOnly => Lambdas {
                gender: 0.0,
                orthogonal: 0.0,
                ..l
            },
            Mode::NoLG => Lambdas { gender: 0.0, ..l },
            Mode::NoLD => Lambdas {
                orthogonal: 0.0,
                ..l
            },
            Mode::NoAdv => Lambdas {
                adversarial: 0.0,
                ..l
            },
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mode {s:?}")))
    }
}

/// Weights of the attribute-prediction, orthogonality and adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub gender: f64,
    pub orthogonal: f64,
    pub adversarial: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Self {
            gender: 0.5,
            orthogonal: 0.5,
            adversarial: 0.5,
        }
    }
}

impl Lambdas {
    pub fn zero() -> Self {
        Self {
            gender: 0.0,
            orthogonal: 0.0,
            adversarial: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_r: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub l_a: f64,
    pub total: f64,
    pub lambdas: Lambdas,
    /// Set when no labeled user was present, so L_G and L_A are defined as 0.
    pub no_labeled_users: bool,
}

/// `L_R + λ_G L_G + λ_D L_D − λ_A L_A`.
pub fn total_loss(l_r: f64, l_g: f64, l_d: f64, l_a: f64, lambdas: Lambdas) -> LossBreakdown {
    LossBreakdown {
        l_r,
        l_g,
        l_d,
        l_a,
        total: l_r + lambdas.gender * l_g + lambdas.orthogonal * l_d - lambdas.adversarial * l_a,
        lambdas,
        no_labeled_users: false,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy of predicted distributions against class labels.
/// An empty batch yields `(0.0, true)`.
pub fn attribute_crossentropy(probabilities: &[Vec<f64>], labels: &[usize]) -> (f64, bool) {
    assert_eq!(probabilities.len(), labels.len());
    if labels.is_empty() {
        return (0.0, true);
    }
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(p, &y)| -p[y].ln())
        .sum();
    (total / labels.len() as f64, false)
}

/// Mean absolute cosine similarity of paired rows; rows with a near-zero
/// norm on either side contribute zero.
pub fn orthogonality_loss(u_bias: &Array2<f64>, u_free: &Array2<f64>) -> f64 {
    assert_eq!(u_bias.dim(), u_free.dim());
    if u_bias.nrows() == 0 {
        return 0.0;
    }
    let total: f64 = u_bias
        .rows()
        .into_iter()
        .zip(u_free.rows())
        .map(|(b, d)| {
            let (nb, nd) = (b.dot(&b).sqrt(), d.dot(&d).sqrt());
            if nb < NORM_GUARD || nd < NORM_GUARD {
                0.0
            } else {
                (b.dot(&d) / (nb * nd)).abs()
            }
        })
        .sum();
    total / u_bias.nrows() as f64
}

pub fn click_score(u: &[f64], news: &[f64]) -> Result<f64> {
    if u.len() != news.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            actual: news.len(),
        });
    }
    Ok(u.iter().zip(news).map(|(a, b)| a * b).sum())
}

/// Negative log posterior of the clicked item among itself and its
/// negatives.
pub fn recommendation_loss(clicked: f64, negatives: &[f64]) -> f64 {
    let max = negatives.iter().copied().fold(clicked, f64::max);
    let denom: f64 = (clicked - max).exp() + negatives.iter().map(|s| (s - max).exp()).sum::<f64>();
    denom.ln() - (clicked - max)
}

/// Dense softmax classifier over user embeddings.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttributeHead {
    pub w: ParamId,
    pub b: ParamId,
}

impl AttributeHead {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, classes: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), fan_in_uniform(dim, classes, rng)),
            b: store.add(format!("{prefix}.b"), Array2::zeros((1, classes))),
        }
    }

    pub fn logits(&self, g: &mut Graph, u: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let z = g.matmul(u, w);
        g.add_bias(z, b)
    }

    pub fn probabilities(&self, store: &ParamStore, u: &[f64]) -> Vec<f64> {
        let w = store.get(self.w);
        let b = store.get(self.b);
        let logits: Vec<f64> = (0..w.ncols())
            .map(|c| b[[0, c]] + u.iter().zip(w.column(c)).map(|(x, y)| x * y).sum::<f64>())
            .collect();
        softmax(&logits)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserEmbeddings {
    pub u_bias: Array1<f64>,
    pub u_free: Array1<f64>,
    pub u_unified: Array1<f64>,
    pub cold_start: bool,
}

/// Row-stacked embeddings for many users.
#[derive(Clone, Debug, PartialEq)]
pub struct UserMatrix {
    pub bias: Array2<f64>,
    pub free: Array2<f64>,
    pub cold_start: Vec<bool>,
}

impl UserMatrix {
    pub fn unified(&self) -> Array2<f64> {
        &self.bias + &self.free
    }

    pub fn user(&self, row: usize) -> UserEmbeddings {
        let u_bias = self.bias.row(row).to_owned();
        let u_free = self.free.row(row).to_owned();
        UserEmbeddings {
            u_unified: &u_bias + &u_free,
            u_bias,
            u_free,
            cold_start: self.cold_start[row],
        }
    }
}

/// One training mini-batch, deduplicated by news and by user.
#[derive(Clone, Debug, Default)]
pub struct BatchInput<'a> {
    pub titles: Vec<&'a EncodedTitle>,
    /// Per user: rows of `titles`, oldest first.
    pub histories: Vec<Vec<usize>>,
    pub labels: Vec<Option<usize>>,
    /// Per sample: user row and candidate rows, clicked item first.
    pub samples: Vec<(usize, Vec<usize>)>,
}

pub struct ForwardOutput {
    pub l_r: Var,
    pub l_g: Option<Var>,
    pub l_d: Option<Var>,
    pub l_a: Option<Var>,
    /// Backward root: reversal is inside the graph, so L_A enters with +1.
    pub root: Var,
    pub breakdown: LossBreakdown,
    pub u_bias: Option<Var>,
    pub u_free: Var,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FairRecModel {
    pub mode: Mode,
    pub num_classes: usize,
    pub config: EncoderConfig,
    pub news: NewsEncoder,
    pub free: HistoryEncoder,
    pub bias: Option<HistoryEncoder>,
    pub predictor: Option<AttributeHead>,
    pub discriminator: Option<AttributeHead>,
}

impl FairRecModel {
    pub fn new(
        store: &mut ParamStore,
        mode: Mode,
        vocab_size: usize,
        config: &EncoderConfig,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(Error::InvalidConfig("need at least two attribute classes".into()));
        }
        let d = config.model_dim();
        let news = NewsEncoder::new(store, "news", vocab_size, config, rng);
        let free = HistoryEncoder::new(store, "user_free", config, rng);
        let (bias, predictor) = if mode.is_decomposed() {
            (
                Some(HistoryEncoder::new(store, "user_bias", config, rng)),
                Some(AttributeHead::new(store, "predictor", d, num_classes, rng)),
            )
        } else {
            (None, None)
        };
        let discriminator = mode
            .has_discriminator()
            .then(|| AttributeHead::new(store, "discriminator", d, num_classes, rng));
        Ok(Self {
            mode,
            num_classes,
            config: config.clone(),
            news,
            free,
            bias,
            predictor,
            discriminator,
        })
    }

    pub fn model_dim(&self) -> usize {
        self.config.model_dim()
    }

    /// Parameters owned by the discriminator head.
    pub fn discriminator_params(&self) -> Vec<ParamId> {
        self.discriminator
            .iter()
            .flat_map(|h| [h.w, h.b])
            .collect()
    }

    fn history_input(&self, histories: &[Vec<usize>]) -> (Vec<Option<usize>>, Rc<[bool]>) {
        let n = self.config.max_history_len;
        let mut rows = Vec::with_capacity(histories.len() * n);
        for h in histories {
            let recent = &h[h.len().saturating_sub(n)..];
            rows.extend(recent.iter().map(|&r| Some(r)));
            rows.extend(std::iter::repeat(None).take(n - recent.len()));
        }
        let mask: Rc<[bool]> = rows.iter().map(Option::is_some).collect();
        (rows, mask)
    }

    /// Encode users from precomputed news rows in `news`.
    fn users_on_graph(
        &self,
        g: &mut Graph,
        news: Var,
        histories: &[Vec<usize>],
        mut rng: Option<&mut Rng>,
    ) -> (Option<Var>, Var) {
        let (rows, mask) = self.history_input(histories);
        let clicked = g.gather_rows(news, rows);
        let u_free = self.free.forward(g, clicked, mask.clone(), rng.as_deref_mut());
        let u_bias = self
            .bias
            .as_ref()
            .map(|enc| enc.forward(g, clicked, mask, rng));
        (u_bias, u_free)
    }

    /// Record the full training objective for one batch. Pass `rng` to
    /// enable dropout.
    pub fn forward(&self, g: &mut Graph, batch: &BatchInput, lambdas: Lambdas, mut rng: Option<&mut Rng>) -> ForwardOutput {
        let lambdas = self.mode.effective(lambdas);
        let news = self.news.forward(g, &batch.titles, rng.as_deref_mut());
        let (u_bias, u_free) = self.users_on_graph(g, news, &batch.histories, rng);
        let unified = match u_bias {
            Some(b) => g.add(b, u_free),
            None => u_free,
        };

        let group = batch.samples.first().map_or(1, |s| s.1.len());
        let mut user_rows = Vec::with_capacity(batch.samples.len() * group);
        let mut cand_rows = Vec::with_capacity(batch.samples.len() * group);
        for (user, cands) in &batch.samples {
            assert_eq!(cands.len(), group, "ragged candidate groups");
            user_rows.extend(std::iter::repeat(Some(*user)).take(group));
            cand_rows.extend(cands.iter().map(|&c| Some(c)));
        }
        let users = g.gather_rows(unified, user_rows);
        let cands = g.gather_rows(news, cand_rows);
        let scores = g.row_dot(users, cands);
        let l_r = g.group_nll(scores, group);

        let labeled: Vec<(usize, usize)> = batch
            .labels
            .iter()
            .enumerate()
            .filter_map(|(row, l)| l.map(|c| (row, c)))
            .collect();
        let labeled_rows: Vec<Option<usize>> = labeled.iter().map(|&(r, _)| Some(r)).collect();
        let labeled_classes: Vec<usize> = labeled.iter().map(|&(_, c)| c).collect();

        let l_g = match (&self.predictor, u_bias) {
            (Some(head), Some(b)) => {
                let rows = g.gather_rows(b, labeled_rows.clone());
                let logits = head.logits(g, rows);
                Some(g.class_nll(logits, labeled_classes.clone()))
            }
            _ => None,
        };
        let l_d = u_bias.map(|b| g.abs_cos_mean(b, u_free));
        let l_a = self.discriminator.as_ref().map(|head| {
            let rows = g.gather_rows(u_free, labeled_rows);
            let reversed = g.grad_scale(rows, -lambdas.adversarial);
            let logits = head.logits(g, reversed);
            g.class_nll(logits, labeled_classes)
        });

        let mut terms = vec![(l_r, 1.0)];
        if let Some(v) = l_g {
            terms.push((v, lambdas.gender));
        }
        if let Some(v) = l_d {
            terms.push((v, lambdas.orthogonal));
        }
        if let Some(v) = l_a {
            terms.push((v, 1.0));
        }
        let root = g.weighted_sum(terms);

        let value = |v: Option<Var>| v.map_or(0.0, |v| g.scalar(v));
        let mut breakdown = total_loss(g.scalar(l_r), value(l_g), value(l_d), value(l_a), lambdas);
        breakdown.no_labeled_users = labeled.is_empty();
        ForwardOutput {
            l_r,
            l_g,
            l_d,
            l_a,
            root,
            breakdown,
            u_bias,
            u_free,
        }
    }

    /// Discriminator loss on fixed bias-free embeddings (one row per batch
    /// user). Only discriminator parameters receive gradient.
    pub fn discriminator_loss(&self, g: &mut Graph, u_free: Array2<f64>, labels: &[Option<usize>]) -> Option<Var> {
        let head = self.discriminator.as_ref()?;
        let labeled: Vec<(usize, usize)> = labels
            .iter()
            .enumerate()
            .filter_map(|(row, l)| l.map(|c| (row, c)))
            .collect();
        if labeled.is_empty() {
            return None;
        }
        let u = g.constant(u_free);
        let rows = g.gather_rows(u, labeled.iter().map(|&(r, _)| Some(r)).collect());
        let logits = head.logits(g, rows);
        Some(g.class_nll(logits, labeled.iter().map(|&(_, c)| c).collect()))
    }

    pub fn encode_news(&self, store: &ParamStore, titles: &[EncodedTitle]) -> Array2<f64> {
        self.news.encode_all(store, titles)
    }

    /// Inference-mode user embeddings; `histories` index rows of `news`.
    pub fn encode_users(&self, store: &ParamStore, news: &Array2<f64>, histories: &[Vec<usize>]) -> UserMatrix {
        let d = self.model_dim();
        let mut bias = Array2::zeros((histories.len(), d));
        let mut free = Array2::zeros((histories.len(), d));
        for (c, chunk) in histories.chunks(256).enumerate() {
            let needed: Vec<usize> = {
                let mut v: Vec<usize> = chunk.iter().flatten().copied().collect();
                v.sort_unstable();
                v.dedup();
                v
            };
            let local: std::collections::HashMap<usize, usize> =
                needed.iter().enumerate().map(|(i, &r)| (r, i)).collect();
            let rows = Array2::from_shape_fn((needed.len(), d), |(i, j)| news[[needed[i], j]]);
            let remapped: Vec<Vec<usize>> = chunk
                .iter()
                .map(|h| h.iter().map(|r| local[r]).collect())
                .collect();
            let mut g = Graph::new(store);
            let x = g.constant(rows);
            let (b, f) = self.users_on_graph(&mut g, x, &remapped, None);
            let range = ndarray::s![c * 256..c * 256 + chunk.len(), ..];
            free.slice_mut(range).assign(g.value(f));
            if let Some(b) = b {
                bias.slice_mut(range).assign(g.value(b));
            }
        }
        UserMatrix {
            bias,
            free,
            cold_start: histories.iter().map(Vec::is_empty).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn crossentropy_examples() {
        let (v, empty) = attribute_crossentropy(&[vec![0.9, 0.1], vec![0.2, 0.8]], &[0, 1]);
        assert!(!empty);
        assert!((v - (-(0.9f64.ln() + 0.8f64.ln()) / 2.0)).abs() < 1e-12);
        assert!((v - 0.16425).abs() < 1e-5);
        let (v, _) = attribute_crossentropy(&[vec![0.5, 0.5]], &[1]);
        assert!((v - 2f64.ln()).abs() < 1e-12);
        assert_eq!(attribute_crossentropy(&[vec![1.0, 0.0]], &[0]).0, 0.0);
        assert_eq!(attribute_crossentropy(&[], &[]), (0.0, true));
    }

    #[test]
    fn orthogonality_examples() {
        let l = |a: Array2<f64>, b: Array2<f64>| orthogonality_loss(&a, &b);
        assert_eq!(l(array![[1.0, 0.0]], array![[0.0, 1.0]]), 0.0);
        assert!((l(array![[0.3, -2.0]], array![[0.3, -2.0]]) - 1.0).abs() < 1e-12);
        assert!((l(array![[1.0, 0.0]], array![[1.0, 1.0]]) - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(l(array![[0.0, 0.0]], array![[1.0, 1.0]]), 0.0);
    }

    #[test]
    fn recommendation_loss_examples() {
        assert!((recommendation_loss(0.7, &[0.7; 4]) - 5f64.ln()).abs() < 1e-12);
        let v = recommendation_loss(2.0, &[1.0, 0.5, 0.0, -1.0]);
        let oracle = -(2f64.exp() / [2.0f64, 1.0, 0.5, 0.0, -1.0].iter().map(|s| s.exp()).sum::<f64>()).ln();
        assert!((v - oracle).abs() < 1e-12);
        assert!((v - 0.574_44).abs() < 1e-5);
        assert!(recommendation_loss(1e6, &[0.0; 4]) < 1e-12);
        assert!(recommendation_loss(800.0, &[799.0]).is_finite());
    }

    #[test]
    fn click_score_examples() {
        assert_eq!(click_score(&[0.0, 1.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(click_score(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(
            click_score(&[3.0, 2.0], &[0.5, 1.0]).unwrap() * 2.0,
            click_score(&[6.0, 4.0], &[0.5, 1.0]).unwrap()
        );
        assert!(matches!(
            click_score(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(1.3, 0.4, 0.2, 0.9, Lambdas::zero()).total, 1.3);
        assert!((total_loss(1.0, 0.4, 0.4, 0.4, Lambdas::default()).total - 1.2).abs() < 1e-12);
        assert_eq!(Lambdas::default().gender, 0.5);
    }

    #[test]
    fn head_probabilities() {
        let mut store = ParamStore::new();
        let mut rng = crate::rng::stream_rng(0, 0);
        let head = AttributeHead::new(&mut store, "h", 3, 2, &mut rng);
        let p = head.probabilities(&store, &[0.4, -1.0, 2.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&x| x > 0.0 && x < 1.0));
        store.get_mut(head.w).fill(0.0);
        assert_eq!(head.probabilities(&store, &[0.4, -1.0, 2.0]), vec![0.5, 0.5]);
        let shifted = softmax(&[1.0 + 4.0, -0.5 + 4.0]);
        let base = softmax(&[1.0, -0.5]);
        assert!((shifted[0] - base[0]).abs() < 1e-12);
    }

    #[test]
    fn mode_strings_round_trip() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("nope".parse::<Mode>().is_err());
    }
}
