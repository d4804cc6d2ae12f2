//! Self-supervised voice/face identity matching and speech-conditioned face
//! generation.

pub mod data_pipeline;
pub mod encoders;
pub mod evaluation;
pub mod gan;
pub mod matching;
mod error;

pub use error::{Error, Result};
