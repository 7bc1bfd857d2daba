//! Dense tensors with reverse-mode gradient accumulation.
//!
//! 64-bit floats throughout; no broadcasting beyond the bias-column append
//! and one-element scalar nodes. Tensors are value-like and movable between
//! threads; a [`Tape`] is confined to the thread that records on it.

mod dense;
mod tape;

pub use dense::{avgpool2, conv2d, matmul, matmul_nt, Tensor};
pub use tape::{Activation, Gradients, Tape, Var};

pub(crate) use dense::conv2d_mat as conv2d_mat_value;
