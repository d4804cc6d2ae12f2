//! Minimal tensor library with a tape-based reverse-mode autodiff engine.
//!
//! The engine is generic over [`Scalar`], so the same model code runs in
//! `f32` for training, `f64` for gradient checks, and [`Dual`] numbers for
//! exact Hessian-vector products.

pub mod checkpoint;
mod error;
pub mod layers;
mod ops;
pub mod optim;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use error::{NnError, Result};
pub use ops::{softmax_rows, BatchStats};
pub use params::{Binder, Param, ParamGrads, ParamId, ParamStore};
pub use scalar::{Dual, Scalar};
pub use tape::{BackwardFn, Grads, Tape, Var};
pub use tensor::Tensor;
