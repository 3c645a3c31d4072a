//! DP-SGD training and analysis of cyclic-group equivariant CNNs.

pub mod data;
pub mod dp;
pub mod error;
pub mod groups;
pub mod harness;
pub mod layers;
pub mod metrics;
pub mod scalar;
pub mod tensor;

pub use error::{Error, Result};
