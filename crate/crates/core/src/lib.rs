pub mod data;
pub mod error;
pub mod harness;
pub mod importance;
pub mod metrics;
pub mod network;
pub mod pruners;
pub mod stats;
pub mod tensor;

pub use error::{Error, Result};
