use std::rc::Rc;

use crate::error::{Error, Result};
use crate::substrate::{Scalar, Tensor};

/// Additive attention mask `[T x S]` with entries in `{0, -inf}`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskMatrix<T> {
    entries: Tensor<T>,
}

impl<T: Scalar> MaskMatrix<T> {
    fn from_rule(t: usize, s: usize, keep: impl Fn(usize, usize) -> bool) -> Result<Self> {
        if t == 0 || s == 0 {
            return Err(Error::config(format!("mask size must be positive, got {t}x{s}")));
        }
        let entries = Tensor::from_fn(&[t, s], |i| {
            if keep(i / s, i % s) {
                T::zero()
            } else {
                T::neg_infinity()
            }
        });
        Ok(MaskMatrix { entries })
    }

    /// Entry `(t, s)` is open iff `s <= t`.
    pub fn causal(t: usize, s: usize) -> Result<Self> {
        Self::from_rule(t, s, |r, c| c <= r)
    }

    /// Entry `(t, s)` is open iff `s == t`.
    pub fn zero_diagonal(t: usize, s: usize) -> Result<Self> {
        if t > s {
            return Err(Error::shape(format!(
                "zero-diagonal mask needs target length {t} <= source length {s}"
            )));
        }
        Self::from_rule(t, s, |r, c| r == c)
    }

    /// Every entry open.
    pub fn open(t: usize, s: usize) -> Result<Self> {
        Self::from_rule(t, s, |_, _| true)
    }

    pub fn entries(&self) -> &Tensor<T> {
        &self.entries
    }

    pub fn target_len(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn source_len(&self) -> usize {
        self.entries.shape()[1]
    }

    pub fn is_open(&self, t: usize, s: usize) -> bool {
        self.entries.row(t)[s] == T::zero()
    }

    /// Per-example mask `[B x 1 x T x S]` adding key padding to this mask.
    ///
    /// For query rows `t < lengths[b]`, source columns at or beyond
    /// `lengths[b]` are closed. Query rows at padding positions keep this
    /// mask as-is so they always retain an open entry; their outputs are
    /// never scored.
    pub fn with_padding(&self, lengths: &[usize]) -> Result<Rc<Tensor<T>>> {
        let (tl, sl) = (self.target_len(), self.source_len());
        if let Some(&bad) = lengths.iter().find(|&&n| n == 0 || n > sl) {
            return Err(Error::shape(format!("length {bad} outside source length {sl}")));
        }
        let mut data = Vec::with_capacity(lengths.len() * tl * sl);
        for &n in lengths {
            for t in 0..tl {
                for s in 0..sl {
                    let base = self.entries.row(t)[s];
                    data.push(if t < n && s >= n { T::neg_infinity() } else { base });
                }
            }
        }
        Ok(Rc::new(Tensor::new(vec![lengths.len(), 1, tl, sl], data)?))
    }
}

/// Causal self-attention mask: `-inf` strictly above the diagonal.
pub fn build_causal_mask<T: Scalar>(n: usize) -> Result<MaskMatrix<T>> {
    MaskMatrix::causal(n, n)
}

/// Alignment mask: `0` on the main diagonal, `-inf` elsewhere.
pub fn build_zero_diag_mask<T: Scalar>(n: usize) -> Result<MaskMatrix<T>> {
    MaskMatrix::zero_diagonal(n, n)
}

#[cfg(test)]
mod tests {
    use super::*;

    const NEG: f64 = f64::NEG_INFINITY;

    #[test]
    fn causal_examples() {
        assert_eq!(build_causal_mask::<f64>(1).unwrap().entries().data(), &[0.0]);
        let m = build_causal_mask::<f64>(3).unwrap();
        assert_eq!(
            m.entries().data(),
            &[0.0, NEG, NEG, 0.0, 0.0, NEG, 0.0, 0.0, 0.0]
        );
        for n in 1..10 {
            let m = build_causal_mask::<f64>(n).unwrap();
            for t in 0..n {
                assert_eq!(m.entries().row(t).iter().filter(|&&v| v == 0.0).count(), t + 1);
            }
        }
    }

    #[test]
    fn zero_diag_examples() {
        assert_eq!(build_zero_diag_mask::<f64>(1).unwrap().entries().data(), &[0.0]);
        assert_eq!(
            build_zero_diag_mask::<f64>(2).unwrap().entries().data(),
            &[0.0, NEG, NEG, 0.0]
        );
    }

    #[test]
    fn size_zero_is_config_error() {
        assert!(matches!(build_causal_mask::<f64>(0), Err(Error::Config(_))));
        assert!(matches!(build_zero_diag_mask::<f64>(0), Err(Error::Config(_))));
    }

    #[test]
    fn padding_composition() {
        let m = build_zero_diag_mask::<f64>(3).unwrap();
        let padded = m.with_padding(&[2]).unwrap();
        // rows 0, 1 keep their diagonal; row 2 sits at padding and keeps its diagonal
        assert_eq!(
            padded.data(),
            &[0.0, NEG, NEG, NEG, 0.0, NEG, NEG, NEG, 0.0]
        );
        let open = MaskMatrix::<f64>::open(3, 3).unwrap().with_padding(&[1]).unwrap();
        assert_eq!(open.data()[..3], [0.0, NEG, NEG]);
        assert_eq!(open.data()[3..6], [0.0, 0.0, 0.0]);
    }
}
