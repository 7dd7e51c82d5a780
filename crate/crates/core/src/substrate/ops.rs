//! Forward kernels on plain tensors. The autodiff graph calls into these and
//! adds the matching backward passes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::substrate::scalar::{gemm, MatRef, Scalar};
use crate::substrate::tensor::Tensor;

/// Pointwise nonlinearity applied after a convolution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<T: Scalar>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.matmul(b)
}

/// For every row of `scores` (rows = all leading axes flattened), the start
/// offset of the mask row it reads under right-aligned broadcasting.
pub(crate) fn broadcast_mask_rows(scores: &[usize], mask: &[usize]) -> Result<Vec<usize>> {
    let err = || {
        Error::shape(format!(
            "mask {mask:?} does not broadcast to scores {scores:?}"
        ))
    };
    if mask.len() > scores.len() || mask.last() != scores.last() {
        return Err(err());
    }
    let lead = scores.len() - mask.len();
    let mut mstrides = vec![0usize; scores.len()];
    let mut acc = 1usize;
    for (i, &d) in mask.iter().enumerate().rev() {
        let axis = lead + i;
        if d == scores[axis] {
            mstrides[axis] = acc;
        } else if d != 1 {
            return Err(err());
        }
        acc *= d;
    }
    let rank = scores.len();
    let rows: usize = scores[..rank - 1].iter().product();
    let mut out = Vec::with_capacity(rows);
    let mut idx = vec![0usize; rank - 1];
    for _ in 0..rows {
        let off: usize = idx.iter().zip(&mstrides).map(|(i, s)| i * s).sum();
        out.push(off);
        for axis in (0..rank - 1).rev() {
            idx[axis] += 1;
            if idx[axis] < scores[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
    Ok(out)
}

/// Row-wise softmax of `scores + mask`, where `mask` holds `0` or `-inf` and
/// broadcasts against `scores` from the right. Masked positions receive weight
/// exactly zero. A row whose every entry is masked is an error.
pub fn masked_softmax<T: Scalar>(scores: &Tensor<T>, mask: &Tensor<T>) -> Result<Tensor<T>> {
    let offsets = broadcast_mask_rows(scores.shape(), mask.shape())?;
    let n = scores.cols();
    let mut out = vec![T::zero(); scores.numel()];
    for (r, &moff) in offsets.iter().enumerate() {
        let srow = &scores.data()[r * n..(r + 1) * n];
        let mrow = &mask.data()[moff..moff + n];
        softmax_row(srow, Some(mrow), &mut out[r * n..(r + 1) * n])
            .map_err(|_| Error::DegenerateRow { row: r })?;
    }
    Tensor::new(scores.shape().to_vec(), out)
}

pub fn softmax<T: Scalar>(scores: &Tensor<T>) -> Tensor<T> {
    let n = scores.cols();
    let mut out = vec![T::zero(); scores.numel()];
    for r in 0..scores.rows() {
        softmax_row(scores.row(r), None, &mut out[r * n..(r + 1) * n]).expect("unmasked row");
    }
    Tensor::new(scores.shape().to_vec(), out).expect("same shape")
}

fn softmax_row<T: Scalar>(scores: &[T], mask: Option<&[T]>, out: &mut [T]) -> Result<(), ()> {
    let live = |j: usize| mask.map_or(true, |m| m[j] == T::zero());
    let mut max = T::neg_infinity();
    for (j, &s) in scores.iter().enumerate() {
        if live(j) && s > max {
            max = s;
        }
    }
    if max == T::neg_infinity() {
        return Err(());
    }
    let mut sum = T::zero();
    for (j, &s) in scores.iter().enumerate() {
        if live(j) {
            let e = (s - max).exp();
            out[j] = e;
            sum = sum + e;
        } else {
            out[j] = T::zero();
        }
    }
    for (j, o) in out.iter_mut().enumerate() {
        if live(j) {
            *o = *o / sum;
        }
    }
    Ok(())
}

/// Per-row normalization statistics saved for the backward pass.
pub(crate) struct LayerNormCache<T> {
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Layer normalization over the last axis followed by the affine `gain`/`bias`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm_cached(x, gain, bias, eps).map(|(out, _)| out)
}

pub(crate) fn layer_norm_cached<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let d = x.cols();
    if gain.shape() != [d] || bias.shape() != [d] {
        return Err(Error::shape(format!(
            "layer_norm over {:?} with gain {:?} and bias {:?}",
            x.shape(),
            gain.shape(),
            bias.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::config("layer_norm eps must be positive"));
    }
    let eps = T::of(eps);
    let dn = T::of(d as f64);
    let rows = x.rows();
    let mut out = vec![T::zero(); x.numel()];
    let mut xhat = vec![T::zero(); x.numel()];
    let mut inv_std = vec![T::zero(); rows];
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().copied().sum::<T>() / dn;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
        let is = T::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache { xhat, inv_std },
    ))
}

/// Left and right zero padding that keeps a length-`L` sequence at length `L`
/// under a width-`k` window.
pub fn same_padding(k: usize) -> (usize, usize) {
    let total = k.saturating_sub(1);
    (total / 2, total - total / 2)
}

/// Length-preserving 1-D convolution over the sequence axis without the
/// activation. `x` is `[B x L x d_in]` (or `[L x d_in]`), `filter` is
/// `[k x d_in x d_out]`, `bias` is `[d_out]`.
pub(crate) fn conv1d_linear<T: Scalar>(
    x: &Tensor<T>,
    filter: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (batch, len, d_in) = seq_dims(x)?;
    if filter.rank() != 3 || filter.shape()[1] != d_in || bias.shape() != [filter.shape()[2]] {
        return Err(Error::shape(format!(
            "conv1d of {:?} with filter {:?} and bias {:?}",
            x.shape(),
            filter.shape(),
            bias.shape()
        )));
    }
    let k = filter.shape()[0];
    let d_out = filter.shape()[2];
    let (left, _) = same_padding(k);
    let mut out = vec![T::zero(); batch * len * d_out];
    for b in 0..batch {
        let xb = &x.data()[b * len * d_in..(b + 1) * len * d_in];
        let ob = &mut out[b * len * d_out..(b + 1) * len * d_out];
        for row in ob.chunks_mut(d_out) {
            row.copy_from_slice(bias.data());
        }
        for w in 0..k {
            // output i reads input i + w - left
            let Some((o0, i0, count)) = window_span(len, w, left) else {
                continue;
            };
            gemm(
                MatRef::new(&xb[i0 * d_in..(i0 + count) * d_in], count, d_in),
                MatRef::new(
                    &filter.data()[w * d_in * d_out..(w + 1) * d_in * d_out],
                    d_in,
                    d_out,
                ),
                T::one(),
                &mut ob[o0 * d_out..(o0 + count) * d_out],
            );
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Tensor::new(shape, out)
}

/// Overlap between output positions and in-range input positions for filter
/// tap `w`: `(first output, first input, count)`.
pub(crate) fn window_span(len: usize, w: usize, left: usize) -> Option<(usize, usize, usize)> {
    let shift = w as isize - left as isize;
    let o0 = (-shift).max(0) as usize;
    let o1 = (len as isize - shift).min(len as isize);
    if o1 <= o0 as isize {
        return None;
    }
    let count = o1 as usize - o0;
    Some((o0, (o0 as isize + shift) as usize, count))
}

pub(crate) fn seq_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [l, d] => Ok((1, l, d)),
        [b, l, d] => Ok((b, l, d)),
        _ => Err(Error::shape(format!(
            "expected a [L x d] or [B x L x d] sequence, got {:?}",
            x.shape()
        ))),
    }
}

/// Zero-padded convolution that preserves sequence length, followed by `activation`.
pub fn conv1d_same<T: Scalar>(
    x: &Tensor<T>,
    filter: &Tensor<T>,
    bias: &Tensor<T>,
    activation: Activation,
) -> Result<Tensor<T>> {
    let mut out = conv1d_linear(x, filter, bias)?;
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = activation.apply(*v));
    Ok(out)
}

/// Mean negative log-likelihood of `targets` under row-wise softmax of
/// `logits`, skipping rows whose target equals `ignore_id`.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: &[usize], ignore_id: usize) -> Result<T> {
    cross_entropy_cached(logits, targets, ignore_id).map(|(loss, _, _)| loss)
}

pub(crate) fn cross_entropy_cached<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[usize],
    ignore_id: usize,
) -> Result<(T, Tensor<T>, usize)> {
    let c = logits.cols();
    if logits.rows() != targets.len() {
        return Err(Error::shape(format!(
            "cross_entropy of logits {:?} against {} targets",
            logits.shape(),
            targets.len()
        )));
    }
    let probs = softmax(logits);
    let mut total = T::zero();
    let mut count = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if t == ignore_id {
            continue;
        }
        if t >= c {
            return Err(Error::shape(format!("target {t} outside {c} classes")));
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        total = total + lse - row[t];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyBatch("every cross-entropy target is ignored".into()));
    }
    Ok((total / T::of(count as f64), probs, count))
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG: f64 = f64::NEG_INFINITY;

    fn t1(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn masked_softmax_examples() {
        let out = masked_softmax(&t1(&[5.0, 7.0]), &t1(&[0.0, NEG])).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0]);

        let out = masked_softmax(&t1(&[0.0, 0.0]), &t1(&[0.0, 0.0])).unwrap();
        assert_eq!(out.data(), &[0.5, 0.5]);

        // exp(1..3) / sum
        let e: Vec<f64> = [1.0f64, 2.0, 3.0].iter().map(|v| v.exp()).collect();
        let s: f64 = e.iter().sum();
        let out = masked_softmax(&t1(&[1.0, 2.0, 3.0]), &t1(&[0.0; 3])).unwrap();
        for (o, ei) in out.data().iter().zip(&e) {
            assert!((o - ei / s).abs() < 1e-15);
        }
        assert!((out.data()[0] - 0.0900).abs() < 1e-4);
        assert!((out.data()[1] - 0.2447).abs() < 1e-4);
        assert!((out.data()[2] - 0.6652).abs() < 1e-4);
    }

    #[test]
    fn all_masked_row_is_an_error() {
        let err = masked_softmax(&t1(&[1.0, 2.0]), &t1(&[NEG, NEG])).unwrap_err();
        assert!(matches!(err, Error::DegenerateRow { row: 0 }));
    }

    #[test]
    fn mask_broadcast_over_heads() {
        // scores [B=2, H=2, T=1, S=2], mask [B=2, 1, 1, 2]
        let scores = Tensor::new(vec![2, 2, 1, 2], vec![0.0; 8]).unwrap();
        let mask = Tensor::new(vec![2, 1, 1, 2], vec![0.0, NEG, NEG, 0.0]).unwrap();
        let out = masked_softmax(&scores, &mask).unwrap();
        assert_eq!(out.data(), &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let bad = Tensor::new(vec![3, 1, 1, 2], vec![0.0; 6]).unwrap();
        assert!(masked_softmax(&scores, &bad).is_err());
    }

    #[test]
    fn layer_norm_examples() {
        let g = t1(&[1.0; 3]);
        let b = t1(&[0.0; 3]);
        let out = layer_norm(&t1(&[4.0, 4.0, 4.0]), &g, &b, 1e-5).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);

        let out = layer_norm(&t1(&[1.0, -1.0]), &t1(&[1.0; 2]), &t1(&[0.0; 2]), 1e-300).unwrap();
        assert!((out.data()[0] - 1.0).abs() < 1e-12 && (out.data()[1] + 1.0).abs() < 1e-12);

        // mean 2, variance 2/3
        let expect = 1.0 / (2.0f64 / 3.0 + 1e-5).sqrt();
        let out = layer_norm(&t1(&[1.0, 2.0, 3.0]), &g, &b, 1e-5).unwrap();
        assert!((out.data()[0] + expect).abs() < 1e-12);
        assert_eq!(out.data()[1], 0.0);
        assert!((out.data()[2] - 1.2247).abs() < 1e-4);
    }

    fn seq(v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn conv_pointwise_and_bias_only() {
        let f = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let out = conv1d_same(&seq(&[1.0, 2.0, 3.0]), &f, &t1(&[0.0]), Activation::Identity).unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 6.0]);

        let f = Tensor::zeros(&[3, 1, 1]);
        let out = conv1d_same(&seq(&[9.0, -1.0, 3.0, 7.0]), &f, &t1(&[5.0]), Activation::Identity).unwrap();
        assert_eq!(out.data(), &[5.0; 4]);
    }

    #[test]
    fn conv_even_kernel_pads_right() {
        assert_eq!(same_padding(2), (0, 1));
        assert_eq!(same_padding(5), (2, 2));
        let f = Tensor::new(vec![2, 1, 1], vec![1.0, 1.0]).unwrap();
        let out = conv1d_same(&seq(&[1.0, 2.0, 3.0]), &f, &t1(&[0.0]), Activation::Identity).unwrap();
        assert_eq!(out.data(), &[3.0, 5.0, 3.0]);
    }

    #[test]
    fn conv_relu_and_long_kernel() {
        let f = Tensor::new(vec![5, 1, 1], vec![1.0; 5]).unwrap();
        let out = conv1d_same(&seq(&[1.0, -4.0]), &f, &t1(&[0.0]), Activation::Relu).unwrap();
        assert_eq!(out.data(), &[0.0, 0.0]);
        let out = conv1d_same(&seq(&[1.0, 2.0]), &f, &t1(&[0.0]), Activation::Identity).unwrap();
        assert_eq!(out.data(), &[3.0, 3.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let uniform = Tensor::new(vec![1, 4], vec![0.3; 4]).unwrap();
        assert!((cross_entropy(&uniform, &[2], 99).unwrap() - 4f64.ln()).abs() < 1e-12);

        let peaked = Tensor::new(vec![1, 2], vec![60.0, 0.0]).unwrap();
        assert!(cross_entropy(&peaked, &[0], 99).unwrap() < 1e-20);

        let l = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let expect = -(1f64.exp() / (1f64.exp() + 2f64.exp())).ln();
        let got = cross_entropy(&l, &[0], 99).unwrap();
        assert!((got - expect).abs() < 1e-12);
        assert!((got - 1.3133).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_all_ignored_is_error() {
        let l = Tensor::new(vec![2, 2], vec![0.0; 4]).unwrap();
        assert!(matches!(cross_entropy(&l, &[0, 0], 0), Err(Error::EmptyBatch(_))));
    }
}
