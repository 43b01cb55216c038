//! Minimal reverse-mode autodiff over dense `f64` matrices, with support for
//! differentiating through gradients (double backprop).

pub mod gradcheck;
mod tape;

pub use gradcheck::{fd_check_params, finite_difference_check};
pub use tape::{Gradients, NodeId, Tape, Var};

pub(crate) use tape::{leaky_relu_scalar, sigmoid_scalar};
