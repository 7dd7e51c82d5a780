//! Dense tensors, forward kernels and reverse-mode gradients.

mod gradcheck;
mod graph;
pub mod ops;
mod params;
mod scalar;
mod tensor;

pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, Var};
pub use ops::Activation;
pub use params::{ParamGroup, ParamId, ParamSlot, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;

/// Additive mask value for excluded attention positions.
pub fn neg_inf<T: Scalar>() -> T {
    T::neg_infinity()
}
