//! Self-attention news and history encoders.
//!
//! Layers own [`ParamId`]s into a shared [`ParamStore`] and record their
//! forward pass on a [`Graph`]. Sequences are flat `batch * seq_len` row
//! blocks with a parallel mask; there are no positional encodings.

use std::io::{BufRead, BufReader};
use std::path::Path;
use std::rc::Rc;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::datagen::{EncodedTitle, Vocab};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub word_dim: usize,
    pub num_heads: usize,
    pub head_out_dim: usize,
    pub attention_query_dim: usize,
    pub dropout_rate: f64,
    pub max_title_len: usize,
    pub max_history_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            word_dim: 300,
            num_heads: 16,
            head_out_dim: 16,
            attention_query_dim: 200,
            dropout_rate: 0.2,
            max_title_len: 16,
            max_history_len: 20,
        }
    }
}

impl EncoderConfig {
    /// Narrow layers for single-core runs over the full synthetic corpus.
    pub fn desk() -> Self {
        Self {
            word_dim: 32,
            num_heads: 4,
            head_out_dim: 8,
            attention_query_dim: 32,
            ..Self::default()
        }
    }

    pub fn model_dim(&self) -> usize {
        self.num_heads * self.head_out_dim
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("word_dim", self.word_dim),
            ("num_heads", self.num_heads),
            ("head_out_dim", self.head_out_dim),
            ("attention_query_dim", self.attention_query_dim),
            ("max_title_len", self.max_title_len),
            ("max_history_len", self.max_history_len),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!(
                "dropout_rate must lie in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// Uniform init with variance `1 / fan_in`.
pub fn fan_in_uniform(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    let limit = (3.0 / rows as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-limit..limit))
}

/// Inverted dropout; a no-op when `rng` is `None` or the rate is zero.
pub fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut Rng>) -> Var {
    let Some(rng) = rng else { return x };
    if rate == 0.0 {
        return x;
    }
    let keep = 1.0 / (1.0 - rate);
    let mask = (0..g.value(x).len())
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect();
    g.mul_const(x, mask)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelfAttentionLayer {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub heads: usize,
}

impl SelfAttentionLayer {
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        in_dim: usize,
        heads: usize,
        head_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let out = heads * head_dim;
        Self {
            wq: store.add(format!("{prefix}.wq"), fan_in_uniform(in_dim, out, rng)),
            wk: store.add(format!("{prefix}.wk"), fan_in_uniform(in_dim, out, rng)),
            wv: store.add(format!("{prefix}.wv"), fan_in_uniform(in_dim, out, rng)),
            heads,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq_len: usize, mask: Rc<[bool]>) -> Var {
        let wq = g.param(self.wq);
        let wk = g.param(self.wk);
        let wv = g.param(self.wv);
        let q = g.matmul(x, wq);
        let k = g.matmul(x, wk);
        let v = g.matmul(x, wv);
        g.self_attention(q, k, v, self.heads, seq_len, mask)
    }

    /// Inference on a single sequence. Returns the outputs and whether the
    /// whole input was masked.
    pub fn apply(&self, store: &ParamStore, input: &Array2<f64>, mask: &[bool]) -> (Array2<f64>, bool) {
        let mut g = Graph::new(store);
        let x = g.constant(input.clone());
        let out = self.forward(&mut g, x, input.nrows(), Rc::from(mask));
        (g.value(out).clone(), !mask.iter().any(|&m| m))
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AttentivePooling {
    pub w: ParamId,
    pub b: ParamId,
    pub q: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pooled {
    pub vector: Array1<f64>,
    pub weights: Vec<f64>,
    pub degenerate: bool,
}

impl AttentivePooling {
    pub fn new(store: &mut ParamStore, prefix: &str, dim: usize, query_dim: usize, rng: &mut Rng) -> Self {
        Self {
            w: store.add(format!("{prefix}.w"), fan_in_uniform(dim, query_dim, rng)),
            b: store.add(format!("{prefix}.b"), Array2::zeros((1, query_dim))),
            q: store.add(format!("{prefix}.q"), fan_in_uniform(query_dim, 1, rng)),
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var, seq_len: usize, mask: Rc<[bool]>) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let q = g.param(self.q);
        let proj = g.matmul(x, w);
        let proj = g.add_bias(proj, b);
        let hidden = g.tanh(proj);
        let scores = g.matmul(hidden, q);
        g.attn_pool(x, scores, seq_len, mask)
    }

    pub fn apply(&self, store: &ParamStore, vectors: &Array2<f64>, mask: &[bool]) -> Pooled {
        let mut g = Graph::new(store);
        let x = g.constant(vectors.clone());
        let out = self.forward(&mut g, x, vectors.nrows(), Rc::from(mask));
        Pooled {
            vector: g.value(out).row(0).to_owned(),
            weights: g.pool_weights(out).expect("pooling node").to_vec(),
            degenerate: !mask.iter().any(|&m| m),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NewsEncoder {
    pub embedding: ParamId,
    pub attention: SelfAttentionLayer,
    pub pooling: AttentivePooling,
    pub max_title_len: usize,
    pub dropout_rate: f64,
}

impl NewsEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, vocab_size: usize, config: &EncoderConfig, rng: &mut Rng) -> Self {
        let table = Array2::from_shape_fn((vocab_size, config.word_dim), |_| rng.gen_range(-0.1..0.1));
        let embedding = store.add(format!("{prefix}.embedding"), table);
        let attention = SelfAttentionLayer::new(
            store,
            &format!("{prefix}.attention"),
            config.word_dim,
            config.num_heads,
            config.head_out_dim,
            rng,
        );
        let pooling = AttentivePooling::new(
            store,
            &format!("{prefix}.pooling"),
            config.model_dim(),
            config.attention_query_dim,
            rng,
        );
        Self {
            embedding,
            attention,
            pooling,
            max_title_len: config.max_title_len,
            dropout_rate: config.dropout_rate,
        }
    }

    /// Encode titles into one row each. Titles must be padded to
    /// `max_title_len`. Empty titles encode to zero.
    pub fn forward(&self, g: &mut Graph, titles: &[&EncodedTitle], mut rng: Option<&mut Rng>) -> Var {
        let len = self.max_title_len;
        let mut indices = Vec::with_capacity(titles.len() * len);
        let mut mask = Vec::with_capacity(titles.len() * len);
        for t in titles {
            assert_eq!(t.indices.len(), len, "title not padded to max_title_len");
            indices.extend_from_slice(&t.indices);
            mask.extend_from_slice(&t.mask);
        }
        let mask: Rc<[bool]> = Rc::from(mask);
        let words = g.embedding(self.embedding, indices);
        let words = dropout(g, words, self.dropout_rate, rng.as_deref_mut());
        let context = self.attention.forward(g, words, len, mask.clone());
        let context = dropout(g, context, self.dropout_rate, rng);
        self.pooling.forward(g, context, len, mask)
    }

    /// Inference-mode encoding of many titles, in chunks.
    pub fn encode_all(&self, store: &ParamStore, titles: &[EncodedTitle]) -> Array2<f64> {
        let dim = store.get(self.attention.wv).ncols();
        let mut out = Array2::zeros((titles.len(), dim));
        for (c, chunk) in titles.chunks(256).enumerate() {
            let mut g = Graph::new(store);
            let refs: Vec<&EncodedTitle> = chunk.iter().collect();
            let v = self.forward(&mut g, &refs, None);
            out.slice_mut(ndarray::s![c * 256..c * 256 + chunk.len(), ..])
                .assign(g.value(v));
        }
        out
    }

    pub fn encode(&self, store: &ParamStore, title: &EncodedTitle) -> Array1<f64> {
        self.encode_all(store, std::slice::from_ref(title)).row(0).to_owned()
    }
}

/// History-level user encoder: self-attention across clicked-news vectors,
/// then attentive pooling.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HistoryEncoder {
    pub attention: SelfAttentionLayer,
    pub pooling: AttentivePooling,
    pub max_history_len: usize,
    pub dropout_rate: f64,
}

impl HistoryEncoder {
    pub fn new(store: &mut ParamStore, prefix: &str, config: &EncoderConfig, rng: &mut Rng) -> Self {
        let d = config.model_dim();
        Self {
            attention: SelfAttentionLayer::new(
                store,
                &format!("{prefix}.attention"),
                d,
                config.num_heads,
                config.head_out_dim,
                rng,
            ),
            pooling: AttentivePooling::new(store, &format!("{prefix}.pooling"), d, config.attention_query_dim, rng),
            max_history_len: config.max_history_len,
            dropout_rate: config.dropout_rate,
        }
    }

    /// `clicked` holds `batch * max_history_len` news rows.
    pub fn forward(&self, g: &mut Graph, clicked: Var, mask: Rc<[bool]>, rng: Option<&mut Rng>) -> Var {
        let n = self.max_history_len;
        let context = self.attention.forward(g, clicked, n, mask.clone());
        let context = dropout(g, context, self.dropout_rate, rng);
        self.pooling.forward(g, context, n, mask)
    }

    /// Inference on one history of news vectors, oldest first. Only the most
    /// recent `max_history_len` rows are used; an empty history gives a zero
    /// vector flagged as cold start.
    pub fn encode(&self, store: &ParamStore, clicked: &Array2<f64>) -> (Array1<f64>, bool) {
        let n = self.max_history_len;
        let dim = clicked.ncols();
        let start = clicked.nrows().saturating_sub(n);
        let recent = clicked.slice(ndarray::s![start.., ..]);
        let mut rows = Array2::zeros((n, dim));
        rows.slice_mut(ndarray::s![..recent.nrows(), ..]).assign(&recent);
        let mask: Vec<bool> = (0..n).map(|i| i < recent.nrows()).collect();
        let mut g = Graph::new(store);
        let x = g.constant(rows);
        let out = self.forward(&mut g, x, Rc::from(mask), None);
        (g.value(out).row(0).to_owned(), recent.nrows() == 0)
    }
}

/// Load word vectors in `token v1 ... vD` text format into rows of an
/// embedding table. Tokens missing from the vocabulary are ignored.
/// Returns the number of rows replaced.
pub fn load_word_embeddings(path: &Path, vocab: &Vocab, table: &mut Array2<f64>) -> Result<usize> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let width = table.ncols();
    let mut replaced = 0;
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values: Vec<f64> = parts
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidInput(format!("{}:{}: {e}", path.display(), line_no + 1)))?;
        if values.len() != width {
            return Err(Error::DimensionMismatch {
                expected: width,
                actual: values.len(),
            });
        }
        let index = vocab.get(token);
        if index <= 1 || vocab.token(index) != Some(token) {
            continue;
        }
        table.row_mut(index as usize).assign(&Array1::from(values));
        replaced += 1;
    }
    Ok(replaced)
}
