//! Minimal dense numeric kernel: tensors, a reverse-mode tape, and Adam.

mod adam;
pub mod gradcheck;
mod tape;
mod tensor;

pub use adam::AdamState;
pub use tape::{Tape, Var};
pub use tensor::{Tensor, TensorMap};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("backward already ran on this tape")]
    BackwardTwice,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),
    #[error("gradient for `{name}` has {got} values, parameter has {expected}")]
    GradientShape {
        name: String,
        expected: usize,
        got: usize,
    },
}
