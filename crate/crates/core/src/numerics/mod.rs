//! Dense `f64` tensors and a reverse-mode gradient tape.

pub mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use tape::{sigmoid, Activation, ParamKey, Tape, Var};
pub use tensor::Tensor;
