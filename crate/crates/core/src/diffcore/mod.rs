//! Minimal reverse-mode differentiation: tensors, an operation tape, a
//! finite-difference checker and the Adam optimizer.

mod adam;
pub mod gradcheck;
pub mod nn;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use tape::{huber_value, sigmoid, softplus, Activation, Gradients, Tape, Var};
pub use tensor::{ParamId, ParamStore, Precision, Tensor};
