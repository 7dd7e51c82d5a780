//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Graph`] records every forward op as it runs. Parameters enter the tape
//! through [`Graph::param`]; [`Graph::backward`] walks the tape in reverse and
//! accumulates gradients into the matching [`ParamSlot`](super::ParamSlot)s.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::substrate::ops::{self, window_span, LayerNormCache};
use crate::substrate::params::{ParamId, ParamStore};
use crate::substrate::scalar::{gemm, MatRef, Scalar};
use crate::substrate::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Bmm { a: Var, b: Var, trans_b: bool },
    AddBias(Var, Var),
    Add(Var, Var),
    Scale(Var, T),
    MulConst(Var, Vec<T>),
    AddConst(Var),
    Relu(Var),
    Tanh(Var),
    MaskedSoftmax(Var),
    LayerNorm { x: Var, gain: Var, bias: Var, cache: LayerNormCache<T> },
    Conv1d { x: Var, filter: Var, bias: Var },
    Embedding { table: Var, ids: Vec<usize>, frozen: Option<usize> },
    ConcatLast(Vec<Var>),
    SplitHeads(Var, usize),
    MergeHeads(Var),
    MeanPool(Var, Vec<usize>),
    SelectFirst(Var),
    CrossEntropy { logits: Var, targets: Vec<usize>, ignore: usize, probs: Tensor<T>, count: usize },
    Sum(Var),
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let slot = store.get(id);
        self.nodes.push(Node {
            value: slot.value.clone(),
            op: Op::Param(id),
            needs_grad: slot.trainable,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b), &[a, b]))
    }

    /// `x * w + b` over the last axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let h = self.matmul(x, w)?;
        self.add_bias(h, b)
    }

    /// Batched product over matching leading axes: `[.., m, k] x [.., k, n]`,
    /// or `[.., m, k] x [.., n, k]^T` when `trans_b` is set.
    pub fn bmm(&mut self, a: Var, b: Var, trans_b: bool) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let err = || Error::shape(format!("bmm of {sa:?} by {sb:?} (trans_b={trans_b})"));
        if sa.len() < 2 || sa.len() != sb.len() || sa[..sa.len() - 2] != sb[..sb.len() - 2] {
            return Err(err());
        }
        let r = sa.len();
        let (m, k) = (sa[r - 2], sa[r - 1]);
        let (kb, n) = if trans_b { (sb[r - 1], sb[r - 2]) } else { (sb[r - 2], sb[r - 1]) };
        if k != kb {
            return Err(err());
        }
        let groups: usize = sa[..r - 2].iter().product();
        let mut out = vec![T::zero(); groups * m * n];
        {
            let (av, bv) = (self.value(a).data(), self.value(b).data());
            for g in 0..groups {
                let bm = if trans_b {
                    MatRef::new(&bv[g * n * k..(g + 1) * n * k], n, k).t()
                } else {
                    MatRef::new(&bv[g * k * n..(g + 1) * k * n], k, n)
                };
                gemm(
                    MatRef::new(&av[g * m * k..(g + 1) * m * k], m, k),
                    bm,
                    T::zero(),
                    &mut out[g * m * n..(g + 1) * m * n],
                );
            }
        }
        let mut shape = sa[..r - 2].to_vec();
        shape.extend([m, n]);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::Bmm { a, b, trans_b }, &[a, b]))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let xv = self.value(x);
        let bv = self.value(b);
        if bv.shape() != [xv.cols()] {
            return Err(Error::shape(format!(
                "bias {:?} against {:?}",
                bv.shape(),
                xv.shape()
            )));
        }
        let n = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o = *o + bb;
            }
        }
        Ok(self.push(out, Op::AddBias(x, b), &[x, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(format!(
                "add of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o + v;
        }
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * s);
        self.push(out, Op::Scale(x, s), &[x])
    }

    /// Elementwise product with constant factors (dropout masks, row masks).
    pub fn mul_const(&mut self, x: Var, factors: Vec<T>) -> Result<Var> {
        if factors.len() != self.value(x).numel() {
            return Err(Error::shape("mul_const factor count"));
        }
        let mut out = self.value(x).clone();
        for (o, &f) in out.data_mut().iter_mut().zip(&factors) {
            *o = *o * f;
        }
        Ok(self.push(out, Op::MulConst(x, factors), &[x]))
    }

    pub fn add_const(&mut self, x: Var, c: &Tensor<T>) -> Result<Var> {
        if c.shape() != self.shape(x) {
            return Err(Error::shape(format!(
                "add_const of {:?} to {:?}",
                c.shape(),
                self.shape(x)
            )));
        }
        let mut out = self.value(x).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(c.data()) {
            *o = *o + v;
        }
        Ok(self.push(out, Op::AddConst(x), &[x]))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        self.push(out, Op::Tanh(x), &[x])
    }

    pub fn activation(&mut self, x: Var, act: ops::Activation) -> Var {
        match act {
            ops::Activation::Relu => self.relu(x),
            ops::Activation::Tanh => self.tanh(x),
            ops::Activation::Identity => x,
        }
    }

    pub fn masked_softmax(&mut self, x: Var, mask: &Rc<Tensor<T>>) -> Result<Var> {
        let out = ops::masked_softmax(self.value(x), mask)?;
        Ok(self.push(out, Op::MaskedSoftmax(x), &[x]))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            ops::layer_norm_cached(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, bias, cache }, &[x, gain, bias]))
    }

    /// Length-preserving convolution without activation; see [`ops::conv1d_same`].
    pub fn conv1d(&mut self, x: Var, filter: Var, bias: Var) -> Result<Var> {
        let out = ops::conv1d_linear(self.value(x), self.value(filter), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { x, filter, bias }, &[x, filter, bias]))
    }

    /// Row lookup. The output has shape `prefix ++ [d]`; row `frozen` receives
    /// no gradient.
    pub fn embedding(
        &mut self,
        table: Var,
        ids: &[usize],
        prefix: &[usize],
        frozen: Option<usize>,
    ) -> Result<Var> {
        let tv = self.value(table);
        if tv.rank() != 2 {
            return Err(Error::shape("embedding table must be 2-D"));
        }
        let (rows, d) = (tv.shape()[0], tv.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= rows) {
            return Err(Error::shape(format!("embedding id {bad} outside table of {rows} rows")));
        }
        let mut out = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            out.extend_from_slice(tv.row(i));
        }
        let mut shape = prefix.to_vec();
        shape.push(d);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
                frozen,
            },
            &[table],
        ))
    }

    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        let first = self.shape(parts[0]).to_vec();
        let lead = &first[..first.len() - 1];
        for &p in parts {
            let s = self.shape(p);
            if &s[..s.len() - 1] != lead {
                return Err(Error::shape(format!("concat of {first:?} with {s:?}")));
            }
        }
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).cols()).collect();
        let total: usize = widths.iter().sum();
        let rows = self.value(parts[0]).rows();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let value = Tensor::new(shape, out)?;
        Ok(self.push(value, Op::ConcatLast(parts.to_vec()), parts))
    }

    /// `[B, L, H*dk] -> [B, H, L, dk]`.
    pub fn split_heads(&mut self, x: Var, heads: usize) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, l, d] = s[..] else {
            return Err(Error::shape(format!("split_heads expects [B, L, d], got {s:?}")));
        };
        if heads == 0 || d % heads != 0 {
            return Err(Error::config(format!("model width {d} not divisible by {heads} heads")));
        }
        let dk = d / heads;
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for li in 0..l {
                for h in 0..heads {
                    let src = ((bi * l + li) * heads + h) * dk;
                    let dst = ((bi * heads + h) * l + li) * dk;
                    out[dst..dst + dk].copy_from_slice(&xv[src..src + dk]);
                }
            }
        }
        let value = Tensor::new(vec![b, heads, l, dk], out)?;
        Ok(self.push(value, Op::SplitHeads(x, heads), &[x]))
    }

    /// `[B, H, L, dk] -> [B, L, H*dk]`.
    pub fn merge_heads(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, heads, l, dk] = s[..] else {
            return Err(Error::shape(format!("merge_heads expects [B, H, L, dk], got {s:?}")));
        };
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); xv.len()];
        for bi in 0..b {
            for h in 0..heads {
                for li in 0..l {
                    let src = ((bi * heads + h) * l + li) * dk;
                    let dst = ((bi * l + li) * heads + h) * dk;
                    out[dst..dst + dk].copy_from_slice(&xv[src..src + dk]);
                }
            }
        }
        let value = Tensor::new(vec![b, l, heads * dk], out)?;
        Ok(self.push(value, Op::MergeHeads(x), &[x]))
    }

    /// Mean over the first `lengths[b]` positions of each `[L x d]` row block.
    pub fn mean_pool(&mut self, x: Var, lengths: &[usize]) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, l, d] = s[..] else {
            return Err(Error::shape(format!("mean_pool expects [B, L, d], got {s:?}")));
        };
        if lengths.len() != b || lengths.iter().any(|&n| n == 0 || n > l) {
            return Err(Error::shape(format!("mean_pool lengths {lengths:?} for {s:?}")));
        }
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); b * d];
        for bi in 0..b {
            let inv = T::one() / T::of(lengths[bi] as f64);
            for li in 0..lengths[bi] {
                let row = &xv[(bi * l + li) * d..(bi * l + li + 1) * d];
                for (o, &v) in out[bi * d..(bi + 1) * d].iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            out[bi * d..(bi + 1) * d].iter_mut().for_each(|o| *o = *o * inv);
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::MeanPool(x, lengths.to_vec()), &[x]))
    }

    pub fn select_first(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let [b, l, d] = s[..] else {
            return Err(Error::shape(format!("select_first expects [B, L, d], got {s:?}")));
        };
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(b * d);
        for bi in 0..b {
            out.extend_from_slice(&xv[bi * l * d..bi * l * d + d]);
        }
        let value = Tensor::new(vec![b, d], out)?;
        Ok(self.push(value, Op::SelectFirst(x), &[x]))
    }

    /// Mean cross-entropy over rows of `logits` whose target is not `ignore`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore: usize) -> Result<Var> {
        let (loss, probs, count) = ops::cross_entropy_cached(self.value(logits), targets, ignore)?;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                ignore,
                probs,
                count,
            },
            &[logits],
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    /// Reverse pass from scalar `loss`, accumulating into `store` gradients.
    pub fn backward(&self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar, got {:?}",
                self.shape(loss)
            )));
        }
        if !self.value(loss).is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", self.value(loss).item())));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads, store);
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[T], grads: &mut [Option<Vec<T>>], store: &mut ParamStore<T>) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Param(id) => {
                let slot = store.get_mut(*id);
                for (s, &v) in slot.grad.data_mut().iter_mut().zip(g) {
                    *s = *s + v;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                self.accum(grads, *a, |da| {
                    gemm(MatRef::new(g, m, n), MatRef::new(bv.data(), k, n).t(), T::one(), da)
                });
                self.accum(grads, *b, |db| {
                    gemm(MatRef::new(av.data(), m, k).t(), MatRef::new(g, m, n), T::one(), db)
                });
            }
            Op::Bmm { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let r = av.rank();
                let (m, k) = (av.shape()[r - 2], av.shape()[r - 1]);
                let n = out.shape()[r - 1];
                let groups = av.numel() / (m * k);
                self.accum(grads, *a, |da| {
                    for gi in 0..groups {
                        let gg = MatRef::new(&g[gi * m * n..(gi + 1) * m * n], m, n);
                        let bslice = &bv.data()[gi * k * n..(gi + 1) * k * n];
                        // da = g * op(b)^T
                        let bt = if *trans_b {
                            MatRef::new(bslice, n, k)
                        } else {
                            MatRef::new(bslice, k, n).t()
                        };
                        gemm(gg, bt, T::one(), &mut da[gi * m * k..(gi + 1) * m * k]);
                    }
                });
                self.accum(grads, *b, |db| {
                    for gi in 0..groups {
                        let gg = MatRef::new(&g[gi * m * n..(gi + 1) * m * n], m, n);
                        let am = MatRef::new(&av.data()[gi * m * k..(gi + 1) * m * k], m, k);
                        let dst = &mut db[gi * k * n..(gi + 1) * k * n];
                        if *trans_b {
                            gemm(gg.t(), am, T::one(), dst);
                        } else {
                            gemm(am.t(), gg, T::one(), dst);
                        }
                    }
                });
            }
            Op::AddBias(x, b) => {
                let n = out.cols();
                self.accum(grads, *x, |dx| add_into(dx, g));
                self.accum(grads, *b, |db| {
                    for row in g.chunks(n) {
                        add_into(db, row);
                    }
                });
            }
            Op::Add(a, b) => {
                self.accum(grads, *a, |da| add_into(da, g));
                self.accum(grads, *b, |db| add_into(db, g));
            }
            Op::Scale(x, s) => self.accum(grads, *x, |dx| {
                for (d, &v) in dx.iter_mut().zip(g) {
                    *d = *d + v * *s;
                }
            }),
            Op::MulConst(x, f) => self.accum(grads, *x, |dx| {
                for ((d, &v), &fi) in dx.iter_mut().zip(g).zip(f) {
                    *d = *d + v * fi;
                }
            }),
            Op::AddConst(x) => self.accum(grads, *x, |dx| add_into(dx, g)),
            Op::Relu(x) => self.accum(grads, *x, |dx| {
                for ((d, &v), &o) in dx.iter_mut().zip(g).zip(out.data()) {
                    if o > T::zero() {
                        *d = *d + v;
                    }
                }
            }),
            Op::Tanh(x) => self.accum(grads, *x, |dx| {
                for ((d, &v), &o) in dx.iter_mut().zip(g).zip(out.data()) {
                    *d = *d + v * (T::one() - o * o);
                }
            }),
            Op::MaskedSoftmax(x) => {
                let n = out.cols();
                self.accum(grads, *x, |dx| {
                    for ((drow, grow), yrow) in dx.chunks_mut(n).zip(g.chunks(n)).zip(out.data().chunks(n)) {
                        let dot: T = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                        for ((d, &gv), &y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d = *d + y * (gv - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { x, gain, bias, cache } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                let dn = T::of(d as f64);
                self.accum(grads, *gain, |dg| {
                    for (grow, hrow) in g.chunks(d).zip(cache.xhat.chunks(d)) {
                        for ((o, &a), &h) in dg.iter_mut().zip(grow).zip(hrow) {
                            *o = *o + a * h;
                        }
                    }
                });
                self.accum(grads, *bias, |db| {
                    for grow in g.chunks(d) {
                        add_into(db, grow);
                    }
                });
                self.accum(grads, *x, |dx| {
                    for (r, (drow, (grow, hrow))) in dx
                        .chunks_mut(d)
                        .zip(g.chunks(d).zip(cache.xhat.chunks(d)))
                        .enumerate()
                    {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            sum_dh = sum_dh + dh;
                            sum_dh_h = sum_dh_h + dh * hrow[j];
                        }
                        let scale = cache.inv_std[r] / dn;
                        for j in 0..d {
                            let dh = grow[j] * gv[j];
                            drow[j] = drow[j] + scale * (dn * dh - sum_dh - hrow[j] * sum_dh_h);
                        }
                    }
                });
            }
            Op::Conv1d { x, filter, bias } => {
                let xv = self.value(*x);
                let fv = self.value(*filter);
                let (batch, len, d_in) = ops::seq_dims(xv).expect("checked in forward");
                let (k, d_out) = (fv.shape()[0], fv.shape()[2]);
                let (left, _) = ops::same_padding(k);
                self.accum(grads, *bias, |db| {
                    for row in g.chunks(d_out) {
                        add_into(db, row);
                    }
                });
                self.accum(grads, *x, |dx| {
                    for b in 0..batch {
                        for w in 0..k {
                            let Some((o0, i0, c)) = window_span(len, w, left) else { continue };
                            let go = &g[(b * len + o0) * d_out..(b * len + o0 + c) * d_out];
                            let fw = &fv.data()[w * d_in * d_out..(w + 1) * d_in * d_out];
                            gemm(
                                MatRef::new(go, c, d_out),
                                MatRef::new(fw, d_in, d_out).t(),
                                T::one(),
                                &mut dx[(b * len + i0) * d_in..(b * len + i0 + c) * d_in],
                            );
                        }
                    }
                });
                self.accum(grads, *filter, |df| {
                    for b in 0..batch {
                        for w in 0..k {
                            let Some((o0, i0, c)) = window_span(len, w, left) else { continue };
                            let go = &g[(b * len + o0) * d_out..(b * len + o0 + c) * d_out];
                            let xs = &xv.data()[(b * len + i0) * d_in..(b * len + i0 + c) * d_in];
                            gemm(
                                MatRef::new(xs, c, d_in).t(),
                                MatRef::new(go, c, d_out),
                                T::one(),
                                &mut df[w * d_in * d_out..(w + 1) * d_in * d_out],
                            );
                        }
                    }
                });
            }
            Op::Embedding { table, ids, frozen } => {
                let d = out.cols();
                self.accum(grads, *table, |dt| {
                    for (r, &id) in ids.iter().enumerate() {
                        if Some(id) == *frozen {
                            continue;
                        }
                        add_into(&mut dt[id * d..(id + 1) * d], &g[r * d..(r + 1) * d]);
                    }
                });
            }
            Op::ConcatLast(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    self.accum(grads, p, |dp| {
                        for (drow, grow) in dp.chunks_mut(w).zip(g.chunks(total)) {
                            add_into(drow, &grow[offset..offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::SplitHeads(x, heads) => {
                let [b, h, l, dk] = out.shape()[..] else { unreachable!() };
                debug_assert_eq!(h, *heads);
                self.accum(grads, *x, |dx| {
                    for bi in 0..b {
                        for li in 0..l {
                            for hi in 0..h {
                                let src = ((bi * h + hi) * l + li) * dk;
                                let dst = ((bi * l + li) * h + hi) * dk;
                                add_into(&mut dx[dst..dst + dk], &g[src..src + dk]);
                            }
                        }
                    }
                });
            }
            Op::MergeHeads(x) => {
                let [b, h, l, dk] = self.shape(*x)[..] else { unreachable!() };
                self.accum(grads, *x, |dx| {
                    for bi in 0..b {
                        for hi in 0..h {
                            for li in 0..l {
                                let dst = ((bi * h + hi) * l + li) * dk;
                                let src = ((bi * l + li) * h + hi) * dk;
                                add_into(&mut dx[dst..dst + dk], &g[src..src + dk]);
                            }
                        }
                    }
                });
            }
            Op::MeanPool(x, lengths) => {
                let [_, l, d] = self.shape(*x)[..] else { unreachable!() };
                self.accum(grads, *x, |dx| {
                    for (bi, &n) in lengths.iter().enumerate() {
                        let inv = T::one() / T::of(n as f64);
                        for li in 0..n {
                            for j in 0..d {
                                let idx = (bi * l + li) * d + j;
                                dx[idx] = dx[idx] + g[bi * d + j] * inv;
                            }
                        }
                    }
                });
            }
            Op::SelectFirst(x) => {
                let [b, l, d] = self.shape(*x)[..] else { unreachable!() };
                self.accum(grads, *x, |dx| {
                    for bi in 0..b {
                        add_into(&mut dx[bi * l * d..bi * l * d + d], &g[bi * d..(bi + 1) * d]);
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                ignore,
                probs,
                count,
            } => {
                let c = probs.cols();
                let scale = g[0] / T::of(*count as f64);
                self.accum(grads, *logits, |dl| {
                    for (r, &t) in targets.iter().enumerate() {
                        if t == *ignore {
                            continue;
                        }
                        for j in 0..c {
                            let onehot = if j == t { T::one() } else { T::zero() };
                            dl[r * c + j] = dl[r * c + j] + scale * (probs.row(r)[j] - onehot);
                        }
                    }
                });
            }
            Op::Sum(x) => self.accum(grads, *x, |dx| dx.iter_mut().for_each(|d| *d = *d + g[0])),
        }
    }

    fn accum(&self, grads: &mut [Option<Vec<T>>], v: Var, f: impl FnOnce(&mut [T])) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        let numel = self.nodes[v.0].value.numel();
        let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); numel]);
        f(slot);
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}
