//! Reverse-mode automatic differentiation over row-major `f64` matrices.
//!
//! A [`Graph`] records every operation of one forward pass. Sequence
//! batches are stored flat: `batch * seq_len` rows with a parallel boolean
//! mask, and the attention operators are fused kernels with hand-written
//! backward passes.

use std::rc::Rc;

use ndarray::{Array2, Axis};

use crate::params::{ParamGrads, ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Constant,
    Param(ParamId),
    Embedding {
        table: ParamId,
        rows: Vec<u32>,
    },
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Tanh(Var),
    Mul(Var, Rc<Vec<f64>>),
    GatherRows(Var, Vec<Option<usize>>),
    SelfAttention {
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        mask: Rc<[bool]>,
        probs: Vec<f64>,
    },
    AttnPool {
        values: Var,
        scores: Var,
        seq_len: usize,
        mask: Rc<[bool]>,
        weights: Vec<f64>,
    },
    RowDot(Var, Var),
    GroupNll {
        scores: Var,
        group: usize,
    },
    ClassNll {
        logits: Var,
        labels: Vec<usize>,
    },
    AbsCosMean {
        a: Var,
        b: Var,
    },
    GradScale(Var, f64),
    WeightedSum(Vec<(Var, f64)>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Norm below which a row is treated as zero by [`Graph::abs_cos_mean`].
pub const NORM_GUARD: f64 = 1e-8;

pub struct Graph<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
pub struct Backward {
    pub params: ParamGrads,
    constants: Vec<Option<Array2<f64>>>,
}

impl Backward {
    /// Gradient with respect to a constant input, if it received any.
    pub fn input_grad(&self, var: Var) -> Option<&Array2<f64>> {
        self.constants.get(var.0).and_then(Option::as_ref)
    }
}

fn row_softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        let v = self.value(var);
        debug_assert_eq!(v.len(), 1);
        v[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        let value = if value.is_standard_layout() {
            value
        } else {
            value.as_standard_layout().into_owned()
        };
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn slice(&self, var: Var) -> &[f64] {
        self.nodes[var.0]
            .value
            .as_slice()
            .expect("node values are standard layout")
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.get(id).clone();
        self.push(value, Op::Param(id))
    }

    /// Rows of an embedding table, one per index.
    pub fn embedding(&mut self, table: ParamId, rows: Vec<u32>) -> Var {
        let t = self.store.get(table);
        let width = t.ncols();
        let src = t.as_slice().expect("standard layout");
        let mut out = Array2::zeros((rows.len(), width));
        {
            let dst = out.as_slice_mut().unwrap();
            for (r, &idx) in rows.iter().enumerate() {
                let idx = idx as usize;
                dst[r * width..(r + 1) * width]
                    .copy_from_slice(&src[idx * width..(idx + 1) * width]);
            }
        }
        self.push(out, Op::Embedding { table, rows })
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `x + bias` with a `1 x m` bias broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let value = self.value(x) + self.value(bias);
        self.push(value, Op::AddBias(x, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Elementwise product with a constant of the same shape (dropout masks).
    pub fn mul_const(&mut self, x: Var, factor: Vec<f64>) -> Var {
        let xv = self.value(x);
        assert_eq!(xv.len(), factor.len());
        let mut value = xv.clone();
        value
            .as_slice_mut()
            .unwrap()
            .iter_mut()
            .zip(&factor)
            .for_each(|(v, f)| *v *= f);
        self.push(value, Op::Mul(x, Rc::new(factor)))
    }

    /// Select rows of `x`; `None` yields a zero row.
    pub fn gather_rows(&mut self, x: Var, rows: Vec<Option<usize>>) -> Var {
        let xv = self.value(x);
        let width = xv.ncols();
        let src = self.slice(x);
        let mut out = Array2::zeros((rows.len(), width));
        {
            let dst = out.as_slice_mut().unwrap();
            for (r, idx) in rows.iter().enumerate() {
                if let Some(i) = idx {
                    dst[r * width..(r + 1) * width]
                        .copy_from_slice(&src[i * width..(i + 1) * width]);
                }
            }
        }
        self.push(out, Op::GatherRows(x, rows))
    }

    /// Multi-head scaled dot-product self-attention over already projected
    /// queries, keys and values (`batch * seq_len` rows each). Masked
    /// positions are excluded as keys and produce zero output rows.
    pub fn self_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        mask: Rc<[bool]>,
    ) -> Var {
        let (rows, dim) = self.value(q).dim();
        assert_eq!(rows, mask.len());
        assert_eq!(rows % seq_len, 0);
        assert_eq!(dim % heads, 0);
        let batch = rows / seq_len;
        let dk = dim / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qs, ks, vs) = (self.slice(q), self.slice(k), self.slice(v));

        let mut out = Array2::zeros((rows, dim));
        let mut probs = vec![0.0; batch * heads * seq_len * seq_len];
        {
            let o = out.as_slice_mut().unwrap();
            let mut scores = vec![0.0; seq_len];
            for b in 0..batch {
                let base = b * seq_len;
                let keys: Vec<usize> = (0..seq_len).filter(|&j| mask[base + j]).collect();
                if keys.is_empty() {
                    continue;
                }
                for h in 0..heads {
                    let off = h * dk;
                    for i in 0..seq_len {
                        if !mask[base + i] {
                            continue;
                        }
                        let qi = &qs[(base + i) * dim + off..(base + i) * dim + off + dk];
                        for (slot, &j) in keys.iter().enumerate() {
                            let kj = &ks[(base + j) * dim + off..(base + j) * dim + off + dk];
                            scores[slot] = dot(qi, kj) * scale;
                        }
                        let s = &mut scores[..keys.len()];
                        row_softmax_in_place(s);
                        let prow = ((b * heads + h) * seq_len + i) * seq_len;
                        let oi = (base + i) * dim + off;
                        for (slot, &j) in keys.iter().enumerate() {
                            probs[prow + j] = s[slot];
                            let vj = &vs[(base + j) * dim + off..(base + j) * dim + off + dk];
                            axpy(s[slot], vj, &mut o[oi..oi + dk]);
                        }
                    }
                }
            }
        }
        self.push(
            out,
            Op::SelfAttention {
                q,
                k,
                v,
                heads,
                seq_len,
                mask,
                probs,
            },
        )
    }

    /// Attention pooling: per sequence, `softmax(scores)` over unmasked rows
    /// weights the value rows. Fully masked sequences pool to zero.
    pub fn attn_pool(&mut self, values: Var, scores: Var, seq_len: usize, mask: Rc<[bool]>) -> Var {
        let (rows, dim) = self.value(values).dim();
        assert_eq!(self.value(scores).dim(), (rows, 1));
        assert_eq!(rows, mask.len());
        let batch = rows / seq_len;
        let (xs, ss) = (self.slice(values), self.slice(scores));
        let mut out = Array2::zeros((batch, dim));
        let mut weights = vec![0.0; rows];
        {
            let o = out.as_slice_mut().unwrap();
            for b in 0..batch {
                let base = b * seq_len;
                let live: Vec<usize> = (0..seq_len).filter(|&i| mask[base + i]).collect();
                if live.is_empty() {
                    continue;
                }
                let mut w: Vec<f64> = live.iter().map(|&i| ss[base + i]).collect();
                row_softmax_in_place(&mut w);
                for (slot, &i) in live.iter().enumerate() {
                    weights[base + i] = w[slot];
                    axpy(
                        w[slot],
                        &xs[(base + i) * dim..(base + i + 1) * dim],
                        &mut o[b * dim..(b + 1) * dim],
                    );
                }
            }
        }
        self.push(
            out,
            Op::AttnPool {
                values,
                scores,
                seq_len,
                mask,
                weights,
            },
        )
    }

    /// Pooling weights recorded by an [`Graph::attn_pool`] node.
    pub fn pool_weights(&self, var: Var) -> Option<&[f64]> {
        match &self.nodes[var.0].op {
            Op::AttnPool { weights, .. } => Some(weights),
            _ => None,
        }
    }

    /// Row-wise inner products, `n x 1`.
    pub fn row_dot(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim());
        let value = (av * bv).sum_axis(Axis(1)).insert_axis(Axis(1));
        self.push(value, Op::RowDot(a, b))
    }

    /// Mean over consecutive groups of `group` scores of `-log softmax` at
    /// the first position of each group.
    pub fn group_nll(&mut self, scores: Var, group: usize) -> Var {
        let s = self.slice(scores);
        assert_eq!(s.len() % group, 0);
        let groups = s.len() / group;
        let total: f64 = s
            .chunks(group)
            .map(|g| log_sum_exp(g) - g[0])
            .sum();
        let value = Array2::from_elem((1, 1), total / groups.max(1) as f64);
        self.push(value, Op::GroupNll { scores, group })
    }

    /// Mean categorical cross-entropy of row-wise logits. An empty batch has
    /// loss zero.
    pub fn class_nll(&mut self, logits: Var, labels: Vec<usize>) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), labels.len());
        let c = lv.ncols();
        let s = self.slice(logits);
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(r, &y)| {
                let row = &s[r * c..(r + 1) * c];
                log_sum_exp(row) - row[y]
            })
            .sum();
        let mean = if labels.is_empty() {
            0.0
        } else {
            total / labels.len() as f64
        };
        self.push(Array2::from_elem((1, 1), mean), Op::ClassNll { logits, labels })
    }

    /// Mean absolute cosine similarity between paired rows. Rows where either
    /// side has norm below [`NORM_GUARD`] contribute zero.
    pub fn abs_cos_mean(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim());
        let (n, d) = av.dim();
        let (xs, ys) = (self.slice(a), self.slice(b));
        let mut total = 0.0;
        for r in 0..n {
            let (x, y) = (&xs[r * d..(r + 1) * d], &ys[r * d..(r + 1) * d]);
            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
            if nx < NORM_GUARD || ny < NORM_GUARD {
                continue;
            }
            total += (dot(x, y) / (nx * ny)).abs();
        }
        let mean = if n == 0 { 0.0 } else { total / n as f64 };
        self.push(Array2::from_elem((1, 1), mean), Op::AbsCosMean { a, b })
    }

    /// Identity forward; multiplies the incoming gradient by `factor`.
    /// With a negative factor this is a gradient reversal layer.
    pub fn grad_scale(&mut self, x: Var, factor: f64) -> Var {
        let value = self.value(x).clone();
        self.push(value, Op::GradScale(x, factor))
    }

    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        assert!(!terms.is_empty());
        let mut value = Array2::zeros(self.value(terms[0].0).raw_dim());
        for &(v, w) in &terms {
            value.scaled_add(w, self.value(v));
        }
        self.push(value, Op::WeightedSum(terms))
    }

    /// Back-propagate from `root`, seeding its gradient with ones.
    pub fn backward(&self, root: Var) -> Backward {
        let n = root.0 + 1;
        let mut grads: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Array2::ones(self.nodes[root.0].value.raw_dim()));
        let mut params = ParamGrads::zeros_like(self.store);
        let mut constants: Vec<Option<Array2<f64>>> = (0..n).map(|_| None).collect();

        fn acc(grads: &mut [Option<Array2<f64>>], var: Var, delta: Array2<f64>) {
            match &mut grads[var.0] {
                Some(g) => *g += &delta,
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => constants[i] = Some(g),
                Op::Param(id) => *params.get_mut(*id) += &g,
                Op::Embedding { table, rows } => {
                    let pg = params.get_mut(*table);
                    let width = pg.ncols();
                    let dst = pg.as_slice_mut().unwrap();
                    let src = g.as_slice().unwrap();
                    for (r, &idx) in rows.iter().enumerate() {
                        axpy(
                            1.0,
                            &src[r * width..(r + 1) * width],
                            &mut dst[idx as usize * width..(idx as usize + 1) * width],
                        );
                    }
                }
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::AddBias(x, bias) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *bias, db);
                    acc(&mut grads, *x, g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Tanh(x) => {
                    let mut d = g;
                    d.zip_mut_with(&node.value, |gi, &y| *gi *= 1.0 - y * y);
                    acc(&mut grads, *x, d);
                }
                Op::Mul(x, factor) => {
                    let mut d = g;
                    d.as_slice_mut()
                        .unwrap()
                        .iter_mut()
                        .zip(factor.iter())
                        .for_each(|(gi, f)| *gi *= f);
                    acc(&mut grads, *x, d);
                }
                Op::GatherRows(x, rows) => {
                    let xv = self.value(*x);
                    let width = xv.ncols();
                    let mut d = Array2::zeros(xv.raw_dim());
                    {
                        let dst = d.as_slice_mut().unwrap();
                        let src = g.as_slice().unwrap();
                        for (r, idx) in rows.iter().enumerate() {
                            if let Some(j) = idx {
                                axpy(
                                    1.0,
                                    &src[r * width..(r + 1) * width],
                                    &mut dst[j * width..(j + 1) * width],
                                );
                            }
                        }
                    }
                    acc(&mut grads, *x, d);
                }
                Op::SelfAttention {
                    q,
                    k,
                    v,
                    heads,
                    seq_len,
                    mask,
                    probs,
                } => {
                    let (dq, dk, dv) =
                        self.self_attention_backward(&g, *q, *k, *v, *heads, *seq_len, mask, probs);
                    acc(&mut grads, *q, dq);
                    acc(&mut grads, *k, dk);
                    acc(&mut grads, *v, dv);
                }
                Op::AttnPool {
                    values,
                    scores,
                    seq_len,
                    mask,
                    weights,
                } => {
                    let (rows, dim) = self.value(*values).dim();
                    let xs = self.slice(*values);
                    let gs = g.as_slice().unwrap();
                    let mut dx = Array2::zeros((rows, dim));
                    let mut ds = Array2::zeros((rows, 1));
                    {
                        let dxs = dx.as_slice_mut().unwrap();
                        let dss = ds.as_slice_mut().unwrap();
                        for b in 0..rows / seq_len {
                            let base = b * seq_len;
                            let gb = &gs[b * dim..(b + 1) * dim];
                            let mut mean = 0.0;
                            for i in 0..*seq_len {
                                if !mask[base + i] {
                                    continue;
                                }
                                let w = weights[base + i];
                                let dw = dot(gb, &xs[(base + i) * dim..(base + i + 1) * dim]);
                                dss[base + i] = dw;
                                mean += w * dw;
                                axpy(w, gb, &mut dxs[(base + i) * dim..(base + i + 1) * dim]);
                            }
                            for i in 0..*seq_len {
                                if mask[base + i] {
                                    dss[base + i] = weights[base + i] * (dss[base + i] - mean);
                                }
                            }
                        }
                    }
                    acc(&mut grads, *values, dx);
                    acc(&mut grads, *scores, ds);
                }
                Op::RowDot(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let da = bv * &g;
                    let db = av * &g;
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::GroupNll { scores, group } => {
                    let s = self.slice(*scores);
                    let groups = (s.len() / group).max(1) as f64;
                    let scale = g[[0, 0]] / groups;
                    let mut d = Array2::zeros(self.value(*scores).raw_dim());
                    {
                        let ds = d.as_slice_mut().unwrap();
                        for (chunk, dchunk) in s.chunks(*group).zip(ds.chunks_mut(*group)) {
                            dchunk.copy_from_slice(chunk);
                            row_softmax_in_place(dchunk);
                            dchunk[0] -= 1.0;
                            dchunk.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *scores, d);
                }
                Op::ClassNll { logits, labels } => {
                    if labels.is_empty() {
                        continue;
                    }
                    let lv = self.value(*logits);
                    let c = lv.ncols();
                    let scale = g[[0, 0]] / labels.len() as f64;
                    let mut d = lv.clone();
                    {
                        let ds = d.as_slice_mut().unwrap();
                        for (r, &y) in labels.iter().enumerate() {
                            let row = &mut ds[r * c..(r + 1) * c];
                            row_softmax_in_place(row);
                            row[y] -= 1.0;
                            row.iter_mut().for_each(|x| *x *= scale);
                        }
                    }
                    acc(&mut grads, *logits, d);
                }
                Op::AbsCosMean { a, b } => {
                    let (n, d) = self.value(*a).dim();
                    let (xs, ys) = (self.slice(*a), self.slice(*b));
                    let scale = g[[0, 0]] / n.max(1) as f64;
                    let mut da = Array2::zeros((n, d));
                    let mut db = Array2::zeros((n, d));
                    {
                        let (das, dbs) = (da.as_slice_mut().unwrap(), db.as_slice_mut().unwrap());
                        for r in 0..n {
                            let (x, y) = (&xs[r * d..(r + 1) * d], &ys[r * d..(r + 1) * d]);
                            let (nx, ny) = (dot(x, x).sqrt(), dot(y, y).sqrt());
                            if nx < NORM_GUARD || ny < NORM_GUARD {
                                continue;
                            }
                            let cos = dot(x, y) / (nx * ny);
                            let sign = if cos > 0.0 {
                                1.0
                            } else if cos < 0.0 {
                                -1.0
                            } else {
                                0.0
                            };
                            let s = sign * scale;
                            for k in 0..d {
                                das[r * d + k] = s * (y[k] / (nx * ny) - cos * x[k] / (nx * nx));
                                dbs[r * d + k] = s * (x[k] / (nx * ny) - cos * y[k] / (ny * ny));
                            }
                        }
                    }
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::GradScale(x, factor) => {
                    let mut d = g;
                    d.mapv_inplace(|v| v * factor);
                    acc(&mut grads, *x, d);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        acc(&mut grads, v, g.mapv(|x| x * w));
                    }
                }
            }
        }
        Backward { params, constants }
    }

    #[allow(clippy::too_many_arguments)]
    fn self_attention_backward(
        &self,
        g: &Array2<f64>,
        q: Var,
        k: Var,
        v: Var,
        heads: usize,
        seq_len: usize,
        mask: &[bool],
        probs: &[f64],
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let (rows, dim) = self.value(q).dim();
        let batch = rows / seq_len;
        let dk = dim / heads;
        let scale = 1.0 / (dk as f64).sqrt();
        let (qs, ks, vs) = (self.slice(q), self.slice(k), self.slice(v));
        let gs = g.as_slice().unwrap();
        let mut dq = Array2::zeros((rows, dim));
        let mut dkm = Array2::zeros((rows, dim));
        let mut dv = Array2::zeros((rows, dim));
        let (dqs, dks, dvs) = (
            dq.as_slice_mut().unwrap(),
            dkm.as_slice_mut().unwrap(),
            dv.as_slice_mut().unwrap(),
        );
        let mut da = vec![0.0; seq_len];
        for b in 0..batch {
            let base = b * seq_len;
            let keys: Vec<usize> = (0..seq_len).filter(|&j| mask[base + j]).collect();
            if keys.is_empty() {
                continue;
            }
            for h in 0..heads {
                let off = h * dk;
                for i in 0..seq_len {
                    if !mask[base + i] {
                        continue;
                    }
                    let prow = ((b * heads + h) * seq_len + i) * seq_len;
                    let gi = &gs[(base + i) * dim + off..(base + i) * dim + off + dk];
                    let mut weighted = 0.0;
                    for &j in &keys {
                        let p = probs[prow + j];
                        let vrow = (base + j) * dim + off;
                        da[j] = dot(gi, &vs[vrow..vrow + dk]);
                        weighted += p * da[j];
                        axpy(p, gi, &mut dvs[vrow..vrow + dk]);
                    }
                    let qrow = (base + i) * dim + off;
                    for &j in &keys {
                        let ds = probs[prow + j] * (da[j] - weighted) * scale;
                        let krow = (base + j) * dim + off;
                        axpy(ds, &ks[krow..krow + dk], &mut dqs[qrow..qrow + dk]);
                        axpy(ds, &qs[qrow..qrow + dk], &mut dks[krow..krow + dk]);
                    }
                }
            }
        }
        (dq, dkm, dv)
    }
}
