//! Two-role motion diffusion: data types, noise schedule, denoiser,
//! training, synthetic data and evaluation metrics.

pub mod condition;
pub mod denoiser;
pub mod error;
pub mod metrics;
pub mod motion;
pub mod nn;
pub mod sampling;
pub mod schedule;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tensor::Matrix;
