//! Differentiable prompt-template and label-token optimization for
//! masked-language-model few-shot classification, on a toy transformer.

pub mod analysis;
pub mod data;
pub mod error;
pub mod harness;
pub mod mlm;
pub mod objectives;
pub mod prompt;
pub mod rng;
pub mod tensor;

pub use error::{DartError, Result};
