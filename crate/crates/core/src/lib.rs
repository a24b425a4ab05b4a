//! Multi-level generated-connectome graph convolutional networks.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod scalar;
pub mod split;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use scalar::Scalar;
