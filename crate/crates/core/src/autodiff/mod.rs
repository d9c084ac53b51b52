//! Minimal reverse-mode automatic differentiation: dense tensors, a
//! recording tape, and a finite-difference checker.

pub mod check;
pub mod tape;
pub mod tensor;

pub use check::{finite_difference_check, FdReport};
pub use tape::{Tape, Var, LOG_EPS};
pub use tensor::{numel, Initializer, Parameter, Scalar, Tensor};
