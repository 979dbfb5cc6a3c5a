//! Dense `f64` tensors, reverse-mode autodiff, and the gradient oracle.

mod autograd;
mod dense;
pub mod gradcheck;
pub(crate) mod kernels;

pub use autograd::{AttentionOutput, Var};
pub use dense::Tensor;
pub use gradcheck::{finite_diff_check, finite_diff_check_many, GradCheckReport};
