//! Dense tensors, reverse-mode gradients, perceptrons, and Adam.

pub mod adam;
pub mod mlp;
pub mod persist;
pub mod sparse;
pub mod stable;
pub mod tape;
pub mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{mlp_forward, Activation, BoundMlp, Layer, MlpParams};
pub use sparse::CsrMatrix;
pub use stable::{finite_diff_check, log_sum_exp};
pub use tape::{grad, Grads, Tape, Var};
pub use tensor::Matrix;
