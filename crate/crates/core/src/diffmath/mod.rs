//! Dense tensors, a gradient tape and a finite-difference checker.

mod fd;
mod tape;
mod tensor;

pub use fd::{finite_difference_gradient, max_relative_error};
pub use tape::{log_sum_exp_slice, Gradients, Tape, Var};
pub use tensor::Tensor;
