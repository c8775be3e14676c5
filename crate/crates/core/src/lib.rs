//! Progressive Wasserstein GANs for single-channel time series.

pub mod autodiff;
pub mod criticlab;
pub mod dataio;
pub mod error;
pub mod ganloss;
pub mod metrics;
pub mod nets;
pub mod real;
pub mod spectral;
pub mod trainer;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
pub use real::Real;
