//! Minimal reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Only the operators the encoders, the separation step and the pose head
//! need are provided. Broadcasting is limited to scalar-with-tensor plus the
//! explicit row broadcast of [`Tape::add_row`].

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport, ABS_FLOOR};
pub use tape::{ElementwiseKind, Tape, Var};
pub use tensor::Tensor;

pub(crate) use tape::softmax_slice;
#[allow(unused_imports)]
pub(crate) use tensor::gemm_acc;

#[cfg(test)]
mod tests;
