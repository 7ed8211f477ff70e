//! Dense `f64` kernels with reverse-mode gradients.

pub mod gradcheck;
pub mod kernels;
pub mod params;
pub mod tape;
pub mod tensor;

pub use gradcheck::{gradient_check, DifferentiableOp, ParamFn, TapeFn};
pub use kernels::{l2_normalize, sigmoid, stable_softmax_row};
pub use params::{ParamId, ParamStore, Parameter};
pub use tape::{multi_head_attention, Gradients, NodeId, Tape};
pub use tensor::Tensor2;
