//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation in creation order. Because inputs
//! always precede outputs, walking the tape backwards is a valid reverse
//! topological order. Parameters enter as named leaves borrowed from a
//! [`ParamStore`](crate::params::ParamStore); their gradients come back keyed
//! by the same names.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::kernels::{axpy, dot, matmul_abt_acc, matmul_acc, matmul_atb_acc};
use crate::params::{GradMap, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
}

enum Op<T: Real> {
    Leaf,
    MatMul(usize, usize),
    MatMulBt(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sum(usize),
    Gelu(usize),
    RmsNorm {
        x: usize,
        gain: usize,
        inv_rms: Vec<T>,
    },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: Vec<T>,
    },
    Embedding {
        table: usize,
        ids: Vec<usize>,
    },
    Rows {
        x: usize,
        start: usize,
    },
    CrossEntropy {
        logits: usize,
        targets: Vec<Option<usize>>,
        probs: Vec<T>,
        denom: T,
    },
}

struct Node<'a, T: Real> {
    value: Cow<'a, Tensor<T>>,
    op: Op<T>,
    name: Option<&'a str>,
    requires_grad: bool,
}

pub struct Graph<'a, T: Real = f32> {
    nodes: Vec<Node<'a, T>>,
    grads: Vec<Option<Vec<T>>>,
    backward_done: bool,
}

impl<T: Real> Default for Graph<'_, T> {
    fn default() -> Self {
        Self::new()
    }
}

const RMS_EPS: f64 = 1e-5;

impl<'a, T: Real> Graph<'a, T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            backward_done: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, Tensor<T>>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            name: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn owned(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let rg = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.push(Cow::Owned(value), op, rg)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Constant (or differentiable, if `requires_grad` is set) input owned by the graph.
    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(Cow::Owned(t), Op::Leaf, rg)
    }

    /// Named leaf borrowed from a parameter registry.
    pub fn param(&mut self, name: &'a str, t: &'a Tensor<T>) -> Var {
        let v = self.push(Cow::Borrowed(t), Op::Leaf, t.requires_grad);
        self.nodes[v.0].name = Some(name);
        v
    }

    /// Looks up `path` in `store` and registers it as a named leaf.
    pub fn store_param(&mut self, store: &'a ParamStore<T>, path: &str) -> Result<Var> {
        let (name, t) = store
            .iter()
            .find(|(p, _)| *p == path)
            .ok_or_else(|| Error::State(format!("missing parameter {path}")))?;
        Ok(self.param(name, t))
    }

    fn shape2(&self, v: usize, op: &'static str) -> Result<(usize, usize)> {
        let s = self.nodes[v].value.shape();
        if s.len() != 2 {
            return Err(Error::dim(op, s, &[]));
        }
        Ok((s[0], s[1]))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.shape2(a.0, "matmul")?;
        let (d2, k) = self.shape2(b.0, "matmul")?;
        if d != d2 {
            return Err(Error::dim(
                "matmul",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![T::zero(); n * k];
        matmul_acc(self.value(a).data(), self.value(b).data(), &mut out, n, d, k);
        let t = Tensor::new(&[n, k], out)?;
        Ok(self.owned(t, Op::MatMul(a.0, b.0), &[a.0, b.0]))
    }

    /// `a · bᵀ`, used by the tied output head.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = self.shape2(a.0, "matmul_bt")?;
        let (k, d2) = self.shape2(b.0, "matmul_bt")?;
        if d != d2 {
            return Err(Error::dim(
                "matmul_bt",
                self.value(a).shape(),
                self.value(b).shape(),
            ));
        }
        let mut out = vec![T::zero(); n * k];
        matmul_abt_acc(self.value(a).data(), self.value(b).data(), &mut out, n, d, k);
        let t = Tensor::new(&[n, k], out)?;
        Ok(self.owned(t, Op::MatMulBt(a.0, b.0), &[a.0, b.0]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("add", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x + *y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.owned(t, Op::Add(a.0, b.0), &[a.0, b.0]))
    }

    /// Adds a length-`k` vector to every row of an `n×k` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (n, k) = self.shape2(a.0, "add_row")?;
        let tb = self.value(bias);
        if tb.len() != k {
            return Err(Error::dim("add_row", self.value(a).shape(), tb.shape()));
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..n {
            for (x, &b) in data[i * k..(i + 1) * k].iter_mut().zip(tb.data()) {
                *x = *x + b;
            }
        }
        let t = Tensor::new(&[n, k], data)?;
        Ok(self.owned(t, Op::AddRow(a.0, bias.0), &[a.0, bias.0]))
    }

    /// `y = xW + b`
    pub fn affine(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::dim("mul", ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| *x * *y).collect();
        let t = Tensor::new(ta.shape(), data)?;
        Ok(self.owned(t, Op::Mul(a.0, b.0), &[a.0, b.0]))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Var {
        let t = self.value(a).map(|x| x * c);
        self.owned(t, Op::Scale(a.0, c), &[a.0])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().copied().sum();
        self.owned(Tensor::scalar(s), Op::Sum(a.0), &[a.0])
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.value(a).map(gelu);
        self.owned(t, Op::Gelu(a.0), &[a.0])
    }

    /// Row-wise RMS normalization with a learned per-column gain.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (n, d) = self.shape2(x.0, "rms_norm")?;
        if self.value(gain).len() != d {
            return Err(Error::dim(
                "rms_norm",
                self.value(x).shape(),
                self.value(gain).shape(),
            ));
        }
        let (tx, tg) = (self.value(x), self.value(gain));
        let mut out = vec![T::zero(); n * d];
        let mut inv_rms = Vec::with_capacity(n);
        let dn = T::lit(d as f64);
        for i in 0..n {
            let row = tx.row(i);
            let ms = dot(row, row) / dn;
            let r = T::one() / (ms + T::lit(RMS_EPS)).sqrt();
            inv_rms.push(r);
            for j in 0..d {
                out[i * d + j] = row[j] * r * tg.data()[j];
            }
        }
        let t = Tensor::new(&[n, d], out)?;
        Ok(self.owned(
            t,
            Op::RmsNorm {
                x: x.0,
                gain: gain.0,
                inv_rms,
            },
            &[x.0, gain.0],
        ))
    }

    /// Multi-head causal self-attention over already-projected `q`, `k`, `v`
    /// (each `len×d_model`). Position `i` attends to positions `0..=i` only.
    pub fn causal_attention(&mut self, q: Var, k: Var, v: Var, heads: usize) -> Result<Var> {
        let (n, d) = self.shape2(q.0, "attention")?;
        for other in [k, v] {
            if self.value(other).shape() != [n, d] {
                return Err(Error::dim(
                    "attention",
                    self.value(q).shape(),
                    self.value(other).shape(),
                ));
            }
        }
        if heads == 0 || d % heads != 0 {
            return Err(Error::Config(format!(
                "d_model {d} not divisible by {heads} heads"
            )));
        }
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let (tq, tk, tv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![T::zero(); heads * n * n];
        let mut out = vec![T::zero(); n * d];
        for h in 0..heads {
            let off = h * dh;
            for i in 0..n {
                let qi = &tq[i * d + off..i * d + off + dh];
                let prow = &mut probs[(h * n + i) * n..(h * n + i + 1) * n];
                let mut max = T::neg_infinity();
                for j in 0..=i {
                    let s = dot(qi, &tk[j * d + off..j * d + off + dh]) * scale;
                    prow[j] = s;
                    max = max.max(s);
                }
                let mut z = T::zero();
                for p in prow[..=i].iter_mut() {
                    *p = (*p - max).exp();
                    z = z + *p;
                }
                let orow = &mut out[i * d + off..i * d + off + dh];
                for j in 0..=i {
                    prow[j] = prow[j] / z;
                    axpy(prow[j], &tv[j * d + off..j * d + off + dh], orow);
                }
            }
        }
        let t = Tensor::new(&[n, d], out)?;
        Ok(self.owned(
            t,
            Op::Attention {
                q: q.0,
                k: k.0,
                v: v.0,
                heads,
                probs,
            },
            &[q.0, k.0, v.0],
        ))
    }

    /// Gathers rows of `table` for each id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (vocab, d) = self.shape2(table.0, "embedding")?;
        let tt = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= vocab {
                return Err(Error::Index {
                    index: id,
                    size: vocab,
                    context: "embedding lookup".into(),
                });
            }
            out.extend_from_slice(tt.row(id));
        }
        let t = Tensor::new(&[ids.len(), d], out)?;
        Ok(self.owned(
            t,
            Op::Embedding {
                table: table.0,
                ids: ids.to_vec(),
            },
            &[table.0],
        ))
    }

    /// Contiguous row slice `start..start+len` of a matrix.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (n, d) = self.shape2(x.0, "rows")?;
        if start + len > n {
            return Err(Error::Index {
                index: start + len,
                size: n,
                context: "row slice".into(),
            });
        }
        let data = self.value(x).data()[start * d..(start + len) * d].to_vec();
        let t = Tensor::new(&[len, d], data)?;
        Ok(self.owned(t, Op::Rows { x: x.0, start }, &[x.0]))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let t: Vec<Option<usize>> = targets.iter().copied().map(Some).collect();
        self.cross_entropy_masked(logits, &t, Reduction::Mean)
    }

    /// Cross entropy over rows with a target; `None` rows are ignored.
    pub fn cross_entropy_masked(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        reduction: Reduction,
    ) -> Result<Var> {
        let (n, vocab) = self.shape2(logits.0, "cross_entropy")?;
        if targets.len() != n {
            return Err(Error::dim("cross_entropy", &[n, vocab], &[targets.len()]));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::Data("cross entropy over zero target positions".into()));
        }
        let tl = self.value(logits);
        let mut probs = vec![T::zero(); n * vocab];
        let mut total = T::zero();
        for (i, tgt) in targets.iter().enumerate() {
            let Some(tgt) = *tgt else { continue };
            if tgt >= vocab {
                return Err(Error::Index {
                    index: tgt,
                    size: vocab,
                    context: format!("cross entropy target at row {i}"),
                });
            }
            let row = tl.row(i);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let prow = &mut probs[i * vocab..(i + 1) * vocab];
            let mut z = T::zero();
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                z = z + *p;
            }
            for p in prow.iter_mut() {
                *p = *p / z;
            }
            total = total + (z.ln() + max - row[tgt]);
        }
        let denom = match reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::lit(count as f64),
        };
        let t = Tensor::scalar(total / denom);
        Ok(self.owned(
            t,
            Op::CrossEntropy {
                logits: logits.0,
                targets: targets.to_vec(),
                probs,
                denom,
            },
            &[logits.0],
        ))
    }

    /// Reverse pass from a scalar `loss`. Named trainable leaves come back in
    /// the map; leaves off the loss path get zero gradients.
    pub fn backward(&mut self, loss: Var) -> Result<GradMap<T>> {
        self.backward_seeded(loss, T::one())
    }

    /// Reverse pass with `d loss` seeded to `seed` instead of one.
    pub fn backward_seeded(&mut self, loss: Var, seed: T) -> Result<GradMap<T>> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this graph; reset before reusing".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.value(loss).shape(), &[1]));
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![seed]);
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g)?;
            // Leaves keep their gradient for collection below.
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        let mut out = GradMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let (Some(name), true) = (node.name, node.requires_grad) else {
                continue;
            };
            let shape = node.value.shape();
            let grad = match &self.grads[i] {
                Some(g) => Tensor::new(shape, g.clone())?,
                None => Tensor::zeros(shape),
            };
            out.accumulate(name, &grad)?;
        }
        Ok(out)
    }

    /// Clears backward state so the same tape can be differentiated again.
    pub fn reset(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    fn acc(&mut self, idx: usize, f: impl FnOnce(&mut [T], &[Node<'a, T>])) {
        if !self.nodes[idx].requires_grad {
            return;
        }
        let len = self.nodes[idx].value.len();
        let mut buf = self.grads[idx].take().unwrap_or_else(|| vec![T::zero(); len]);
        f(&mut buf, &self.nodes);
        self.grads[idx] = Some(buf);
    }

    fn propagate(&mut self, i: usize, g: &[T]) -> Result<()> {
        // Op payloads are moved out temporarily so inputs can be borrowed mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            &Op::MatMul(a, b) => {
                let (n, d) = self.shape2(a, "matmul")?;
                let k = self.nodes[b].value.cols();
                self.acc(a, |buf, nodes| {
                    matmul_abt_acc(g, nodes[b].value.data(), buf, n, k, d)
                });
                self.acc(b, |buf, nodes| {
                    matmul_atb_acc(nodes[a].value.data(), g, buf, n, d, k)
                });
            }
            &Op::MatMulBt(a, b) => {
                let (n, d) = self.shape2(a, "matmul_bt")?;
                let k = self.nodes[b].value.rows();
                self.acc(a, |buf, nodes| {
                    matmul_acc(g, nodes[b].value.data(), buf, n, k, d)
                });
                // d b[k×d] = gᵀ[k×n] · a[n×d]
                self.acc(b, |buf, nodes| {
                    let ad = nodes[a].value.data();
                    for r in 0..n {
                        let arow = &ad[r * d..(r + 1) * d];
                        for j in 0..k {
                            let gj = g[r * k + j];
                            if gj != T::zero() {
                                axpy(gj, arow, &mut buf[j * d..(j + 1) * d]);
                            }
                        }
                    }
                });
            }
            &Op::Add(a, b) => {
                for x in [a, b] {
                    self.acc(x, |buf, _| axpy(T::one(), g, buf));
                }
            }
            &Op::AddRow(a, bias) => {
                self.acc(a, |buf, _| axpy(T::one(), g, buf));
                self.acc(bias, |buf, _| {
                    for row in g.chunks_exact(buf.len()) {
                        axpy(T::one(), row, buf);
                    }
                });
            }
            &Op::Mul(a, b) => {
                self.acc(a, |buf, nodes| {
                    for ((o, &gi), &bi) in buf.iter_mut().zip(g).zip(nodes[b].value.data()) {
                        *o = *o + gi * bi;
                    }
                });
                self.acc(b, |buf, nodes| {
                    for ((o, &gi), &ai) in buf.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o = *o + gi * ai;
                    }
                });
            }
            &Op::Scale(a, c) => {
                self.acc(a, |buf, _| axpy(c, g, buf));
            }
            &Op::Sum(a) => {
                let g0 = g[0];
                self.acc(a, |buf, _| {
                    for o in buf.iter_mut() {
                        *o = *o + g0;
                    }
                });
            }
            &Op::Gelu(a) => {
                self.acc(a, |buf, nodes| {
                    for ((o, &gi), &x) in buf.iter_mut().zip(g).zip(nodes[a].value.data()) {
                        *o = *o + gi * gelu_grad(x);
                    }
                });
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (x, gain) = (*x, *gain);
                let (n, d) = self.shape2(x, "rms_norm")?;
                let dn = T::lit(d as f64);
                self.acc(x, |buf, nodes| {
                    let xd = nodes[x].value.data();
                    let gd = nodes[gain].value.data();
                    let mut gy = vec![T::zero(); d];
                    for r in 0..n {
                        let xr = &xd[r * d..(r + 1) * d];
                        for j in 0..d {
                            gy[j] = g[r * d + j] * gd[j];
                        }
                        let ir = inv_rms[r];
                        let c = ir * ir * ir * dot(&gy, xr) / dn;
                        for j in 0..d {
                            buf[r * d + j] = buf[r * d + j] + gy[j] * ir - c * xr[j];
                        }
                    }
                });
                self.acc(gain, |buf, nodes| {
                    let xd = nodes[x].value.data();
                    for r in 0..n {
                        let ir = inv_rms[r];
                        for j in 0..d {
                            buf[j] = buf[j] + g[r * d + j] * xd[r * d + j] * ir;
                        }
                    }
                });
            }
            Op::Attention {
                q,
                k,
                v,
                heads,
                probs,
            } => {
                let (q, k, v, heads) = (*q, *k, *v, *heads);
                self.attention_backward(q, k, v, heads, probs, g)?;
            }
            Op::Embedding { table, ids } => {
                let table = *table;
                let d = self.nodes[table].value.cols();
                self.acc(table, |buf, _| {
                    for (r, &id) in ids.iter().enumerate() {
                        axpy(T::one(), &g[r * d..(r + 1) * d], &mut buf[id * d..(id + 1) * d]);
                    }
                });
            }
            &Op::Rows { x, start } => {
                let d = self.nodes[x].value.cols();
                self.acc(x, |buf, _| {
                    axpy(T::one(), g, &mut buf[start * d..start * d + g.len()]);
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
                denom,
            } => {
                let logits = *logits;
                let vocab = self.nodes[logits].value.cols();
                let c = g[0] / *denom;
                self.acc(logits, |buf, _| {
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let row = &mut buf[r * vocab..(r + 1) * vocab];
                        axpy(c, &probs[r * vocab..(r + 1) * vocab], row);
                        row[t] = row[t] - c;
                    }
                });
            }
        }
        self.nodes[i].op = op;
        Ok(())
    }

    fn attention_backward(
        &mut self,
        q: usize,
        k: usize,
        v: usize,
        heads: usize,
        probs: &[T],
        g: &[T],
    ) -> Result<()> {
        let (n, d) = self.shape2(q, "attention")?;
        let dh = d / heads;
        let scale = T::one() / T::lit(dh as f64).sqrt();
        let mut dq = vec![T::zero(); n * d];
        let mut dk = vec![T::zero(); n * d];
        let mut dv = vec![T::zero(); n * d];
        {
            let tq = self.nodes[q].value.data();
            let tk = self.nodes[k].value.data();
            let tv = self.nodes[v].value.data();
            let mut ds = vec![T::zero(); n];
            for h in 0..heads {
                let off = h * dh;
                for i in 0..n {
                    let prow = &probs[(h * n + i) * n..(h * n + i) * n + i + 1];
                    let gi = &g[i * d + off..i * d + off + dh];
                    let mut inner = T::zero();
                    for j in 0..=i {
                        let dp = dot(gi, &tv[j * d + off..j * d + off + dh]);
                        ds[j] = dp;
                        inner = inner + dp * prow[j];
                        axpy(prow[j], gi, &mut dv[j * d + off..j * d + off + dh]);
                    }
                    for j in 0..=i {
                        let s = prow[j] * (ds[j] - inner) * scale;
                        if s != T::zero() {
                            axpy(
                                s,
                                &tk[j * d + off..j * d + off + dh],
                                &mut dq[i * d + off..i * d + off + dh],
                            );
                            axpy(
                                s,
                                &tq[i * d + off..i * d + off + dh],
                                &mut dk[j * d + off..j * d + off + dh],
                            );
                        }
                    }
                }
            }
        }
        for (idx, grad) in [(q, dq), (k, dk), (v, dv)] {
            self.acc(idx, |buf, _| axpy(T::one(), &grad, buf));
        }
        Ok(())
    }
}

fn gelu<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(0.044715) * x * x * x);
    T::lit(0.5) * x * (T::one() + u.tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::lit((2.0 / std::f64::consts::PI).sqrt());
    let u = c * (x + T::lit(0.044715) * x * x * x);
    let t = u.tanh();
    let du = c * (T::one() + T::lit(3.0 * 0.044715) * x * x);
    T::lit(0.5) * (T::one() + t) + T::lit(0.5) * x * (T::one() - t * t) * du
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_identity_and_bias() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::mat(&[&[1.0, 2.0]]));
        let w = g.input(Tensor::mat(&[&[1.0, 0.0], &[0.0, 1.0]]));
        let y = g.affine(x, w, None).unwrap();
        assert_eq!(g.value(y).data(), &[1.0, 2.0]);

        let x = g.input(Tensor::mat(&[&[1.0, 1.0]]));
        let w = g.input(Tensor::mat(&[&[2.0, 3.0], &[4.0, 5.0]]));
        let b = g.input(Tensor::new(&[2], vec![1.0, 1.0]).unwrap());
        let y = g.affine(x, w, Some(b)).unwrap();
        assert_eq!(g.value(y).data(), &[7.0, 9.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let mut g = Graph::<f32>::new();
        let x = g.input(Tensor::zeros(&[1, 3]));
        let w = g.input(Tensor::zeros(&[2, 2]));
        let err = g.affine(x, w, None).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn cross_entropy_uniform_and_peaked() {
        let mut g = Graph::<f64>::new();
        let l = g.input(Tensor::zeros(&[1, 4]));
        let loss = g.softmax_cross_entropy(l, &[2]).unwrap();
        assert!((g.value(loss).item() - 4f64.ln()).abs() < 1e-12);

        let l = g.input(Tensor::from_rows(&[&[10.0, -10.0]]));
        let loss = g.softmax_cross_entropy(l, &[0]).unwrap();
        // log(1 + e^-20)
        let expect = (1.0 + (-20.0f64).exp()).ln();
        assert!((g.value(loss).item() - expect).abs() < 1e-15);
        assert!((expect - 2.06e-9).abs() < 1e-11);
    }

    #[test]
    fn cross_entropy_target_out_of_range() {
        let mut g = Graph::<f32>::new();
        let l = g.input(Tensor::zeros(&[1, 4]));
        assert!(matches!(
            g.softmax_cross_entropy(l, &[4]),
            Err(Error::Index { index: 4, size: 4, .. })
        ));
    }

    #[test]
    fn square_gradient() {
        let x = Tensor::new(&[1], vec![3.0f32]).unwrap().with_grad(true);
        let mut g = Graph::new();
        let v = g.param("x", &x);
        let sq = g.mul(v, v).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("x").unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_of_affine_gradient_broadcasts_x() {
        let w = Tensor::new(&[2, 2], vec![0.3f32, -0.1, 2.0, 0.5])
            .unwrap()
            .with_grad(true);
        let mut g = Graph::new();
        let x = g.input(Tensor::mat(&[&[1.0, 1.0]]));
        let wv = g.param("w", &w);
        let y = g.matmul(x, wv).unwrap();
        let loss = g.sum(y);
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get("w").unwrap().data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn unreached_parameter_gets_zero_gradient() {
        let a = Tensor::new(&[2], vec![1.0f32, 2.0]).unwrap().with_grad(true);
        let b = Tensor::new(&[3], vec![1.0f32, 2.0, 3.0]).unwrap().with_grad(true);
        let mut g = Graph::new();
        let va = g.param("a", &a);
        let _vb = g.param("b", &b);
        let loss = g.sum(va);
        let grads = g.backward(loss).unwrap();
        let gb = grads.get("b").unwrap();
        assert_eq!(gb.shape(), &[3]);
        assert!(gb.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn second_backward_is_state_error() {
        let a = Tensor::new(&[1], vec![1.0f32]).unwrap().with_grad(true);
        let mut g = Graph::new();
        let va = g.param("a", &a);
        let loss = g.sum(va);
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::State(_))));
        g.reset();
        assert!(g.backward(loss).is_ok());
    }

    #[test]
    fn frozen_leaves_are_skipped() {
        let a = Tensor::new(&[1], vec![1.0f32]).unwrap();
        let mut g = Graph::new();
        let va = g.param("a", &a);
        let loss = g.sum(va);
        let grads = g.backward(loss).unwrap();
        assert!(grads.get("a").is_none());
    }
}
