//! Quantized RNN-T inference engine.

pub mod decode;
pub mod error;
pub mod features;
pub mod hwsim;
pub mod lstm;
pub mod model;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
