//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! Values are recorded on a [`Tape`] as they are computed; [`Tape::backward`]
//! walks the record in reverse append order and accumulates gradients into
//! every leaf created with `requires_grad`. Operations return
//! [`Error::NonFinite`](crate::Error::NonFinite) instead of recording NaN or
//! infinity.

mod attention;
mod gradcheck;
mod kernels;
mod tape;
mod tensor;

pub use attention::multi_head_attention;
pub use gradcheck::{finite_diff_check, finite_diff_check_sampled};
pub use tape::{sigmoid, CustomOp, Gradients, NodeId, ReduceKind, Tape, Var};
pub use tensor::{Init, Tensor};
