//! Parameterized building blocks shared by the encoder and both decoders.

use std::rc::Rc;

use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::GroupValues;
use crate::error::Result;
use crate::substrate::{Graph, ParamGroup, ParamId, ParamStore, Scalar, Tensor, Var};

/// Forward-pass mode. Training draws inverted-dropout masks from `rng`.
pub enum Mode<'r> {
    Eval,
    Train {
        dropout: GroupValues,
        rng: &'r mut ChaCha8Rng,
    },
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train { .. })
    }
}

/// Inverted dropout: scales kept activations by `1 / (1 - rate)`; identity in eval mode.
pub fn dropout<T: Scalar>(g: &mut Graph<T>, x: Var, group: ParamGroup, mode: &mut Mode<'_>) -> Result<Var> {
    let Mode::Train { dropout, rng } = mode else {
        return Ok(x);
    };
    let rate = dropout.get(group);
    if rate <= 0.0 {
        return Ok(x);
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let n = g.value(x).numel();
    let factors = (0..n)
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    g.mul_const(x, factors)
}

pub(crate) fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize], limit: f64) -> Tensor<T> {
    let dist = Uniform::new_inclusive(-limit, limit);
    Tensor::from_fn(shape, |_| T::of(dist.sample(rng)))
}

pub(crate) fn xavier<T: Scalar>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor<T> {
    uniform(rng, &[fan_in, fan_out], (6.0 / (fan_in + fan_out) as f64).sqrt())
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d_in: usize,
        d_out: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(Linear {
            weight: store.insert(&format!("{name}.weight"), xavier(rng, d_in, d_out), group)?,
            bias: store.insert(&format!("{name}.bias"), Tensor::zeros(&[d_out]), group)?,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let w = g.param(p, self.weight);
        let b = g.param(p, self.bias);
        g.linear(x, w, b)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d: usize, eps: f64, group: ParamGroup) -> Result<Self> {
        Ok(LayerNorm {
            gain: store.insert(&format!("{name}.gain"), Tensor::full(&[d], T::one()), group)?,
            bias: store.insert(&format!("{name}.bias"), Tensor::zeros(&[d]), group)?,
            eps,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &ParamStore<T>, x: Var) -> Result<Var> {
        let gain = g.param(p, self.gain);
        let bias = g.param(p, self.bias);
        g.layer_norm(x, gain, bias, self.eps)
    }
}

/// Position-wise `W2 * relu(W1 * x + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct FeedForward {
    pub inner: Linear,
    pub outer: Linear,
}

impl FeedForward {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        hidden: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(FeedForward {
            inner: Linear::new(store, rng, &format!("{name}.inner"), d, hidden, group)?,
            outer: Linear::new(store, rng, &format!("{name}.outer"), hidden, d, group)?,
        })
    }

    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        x: Var,
        group: ParamGroup,
        mode: &mut Mode<'_>,
    ) -> Result<Var> {
        let h = self.inner.forward(g, p, x)?;
        let h = g.relu(h);
        let h = dropout(g, h, group, mode)?;
        self.outer.forward(g, p, h)
    }
}

/// Multi-head scaled dot-product attention with an additive `{0, -inf}` mask.
#[derive(Clone, Copy, Debug)]
pub struct MultiHeadAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

/// Attention output `[B x T x d]` and the per-head weights `[B x H x T x S]`.
pub struct AttentionOutput {
    pub output: Var,
    pub weights: Var,
}

impl MultiHeadAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        d: usize,
        heads: usize,
        group: ParamGroup,
    ) -> Result<Self> {
        Ok(MultiHeadAttention {
            query: Linear::new(store, rng, &format!("{name}.query"), d, d, group)?,
            key: Linear::new(store, rng, &format!("{name}.key"), d, d, group)?,
            value: Linear::new(store, rng, &format!("{name}.value"), d, d, group)?,
            output: Linear::new(store, rng, &format!("{name}.output"), d, d, group)?,
            heads,
        })
    }

    /// `queries` is `[B x T x d]`, `memory` is `[B x S x d]`, and `mask`
    /// broadcasts to `[B x H x T x S]` (typically `[B x 1 x T x S]`).
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<T>,
        p: &ParamStore<T>,
        queries: Var,
        memory: Var,
        mask: &Rc<Tensor<T>>,
    ) -> Result<AttentionOutput> {
        let d = g.value(queries).cols();
        let dk = d / self.heads;
        let q = self.query.forward(g, p, queries)?;
        let k = self.key.forward(g, p, memory)?;
        let v = self.value.forward(g, p, memory)?;
        let q = g.split_heads(q, self.heads)?;
        let k = g.split_heads(k, self.heads)?;
        let v = g.split_heads(v, self.heads)?;
        let scores = g.bmm(q, k, true)?;
        let scores = g.scale(scores, T::of(1.0 / (dk as f64).sqrt()));
        let weights = g.masked_softmax(scores, mask)?;
        let ctx = g.bmm(weights, v, false)?;
        let ctx = g.merge_heads(ctx)?;
        let output = self.output.forward(g, p, ctx)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Fixed sinusoidal position table `[len x d]`.
pub fn sinusoidal_positions<T: Scalar>(len: usize, d: usize) -> Tensor<T> {
    Tensor::from_fn(&[len, d], |i| {
        let (pos, j) = ((i / d) as f64, i % d);
        let angle = pos / 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        T::of(if j % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Adds sinusoidal positions to every row block of a `[B x L x d]` value.
pub fn add_positions<T: Scalar>(g: &mut Graph<T>, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let (l, d) = (shape[1], shape[2]);
    let table = sinusoidal_positions::<T>(l, d);
    let tiled = Tensor::from_fn(&shape, |i| table.data()[i % (l * d)]);
    g.add_const(x, &tiled)
}

/// Factors that keep the first `lengths[b]` rows of each `[L x d]` block and zero the rest.
pub fn length_row_mask<T: Scalar>(lengths: &[usize], max_len: usize, d: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(lengths.len() * max_len * d);
    for &n in lengths {
        for l in 0..max_len {
            let v = if l < n { T::one() } else { T::zero() };
            out.extend(std::iter::repeat(v).take(d));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positions_start_with_sin_cos() {
        let t = sinusoidal_positions::<f64>(3, 4);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.row(1)[0] - 1f64.sin()).abs() < 1e-15);
        assert!((t.row(1)[2] - (0.01f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn dropout_is_identity_in_eval() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[4], 2.0));
        let y = dropout(&mut g, x, ParamGroup::Encoder, &mut Mode::Eval).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn dropout_scales_survivors() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1000], 1.0));
        let mut mode = Mode::Train {
            dropout: GroupValues::splat(0.5),
            rng: &mut rng,
        };
        let y = dropout(&mut g, x, ParamGroup::Encoder, &mut mode).unwrap();
        let vals = g.value(y).data();
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v == 2.0).count();
        assert!((400..600).contains(&kept), "{kept}");
    }
}
