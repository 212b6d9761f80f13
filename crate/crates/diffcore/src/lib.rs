//! Reverse-mode automatic differentiation over dense `f64` matrices, with
//! dense-layer networks and an Adam optimizer.
//!
//! The engine is deliberately small: a [`Tape`] records primitives (matmul,
//! broadcast add/mul, tanh, relu, exp, log, square, clamp, sums, means and a
//! row-wise log-softmax) and replays them backwards once.

pub mod checkpoint;
mod error;
pub mod mlp;
pub mod optim;
mod tape;
mod tensor;

pub use error::{DiffError, Result};
pub use mlp::{Activation, Dense, Mlp, MlpVars, ParamGrads};
pub use optim::{Adam, AdamConfig};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{matmul, Tensor};
