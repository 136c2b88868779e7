//! Dense row-major tensors with a tape-based reverse-mode differentiation engine.
//!
//! A [`Graph`] records every operation applied to its [`Var`] handles. Calling
//! [`Graph::backward`] on a scalar result walks the tape in reverse creation
//! order and accumulates gradients into every node that requires one.
//!
//! The engine is generic over [`Scalar`] so that the same model code can be
//! trained in `f32` and verified in `f64` with [`grad_check`].

mod error;
mod gradcheck;
mod graph;
mod scalar;
mod tensor;

pub use error::{AutogradError, Result};
pub use gradcheck::{grad_check, relative_error, Coordinate, GradCheckConfig, GradCheckReport};
pub use graph::{Fault, Graph, Var};
pub use scalar::Scalar;
pub use tensor::Tensor;
