//! Differentiable operations recorded as methods on [`Var`](crate::Var).

mod conv;
mod elementwise;
mod linalg;
pub(crate) mod loss;
mod norm;
mod shape;

pub use norm::BatchStats;
pub use loss::softmax_rows;
