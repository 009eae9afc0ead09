//! Hardware-guided, robustness-aware structured pruning toolkit for small
//! CNN classifiers.

pub mod adversarial;
pub mod blob;
pub mod dataset;
pub mod designgen;
pub mod error;
pub mod model;
pub mod perf;
pub mod pruning;
pub mod quant;
pub mod seed;
pub mod sim;
pub mod tensor;

pub use error::{Error, Result};
