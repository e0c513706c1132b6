//! Deep multi-fidelity Gaussian processes.
//!
//! A two-fidelity co-kriging model whose kernels act on features produced by
//! a small neural network trained jointly with the GP hyperparameters by
//! exact marginal likelihood. Fixing the network to the identity recovers
//! autoregressive (AR(1)) co-kriging.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the trainer and CLI use.

pub mod benchmarks;
pub mod cli;
pub mod error;
pub mod feature_map;
pub mod io;
pub mod kernel;
pub mod mfgp;
pub mod scalar;
pub mod trainer;

pub use error::{Error, Result};
pub use scalar::Real;

pub type KernelParams = kernel::KernelParams<f64>;
pub type FeatureMap = feature_map::FeatureMap<f64>;
pub type FeatureMapParams = feature_map::FeatureMapParams<f64>;
pub type Dataset = mfgp::Dataset<f64>;
pub type ModelParams = mfgp::ModelParams<f64>;
pub type ModelGradient = mfgp::ModelGradient<f64>;
pub type PosteriorPrediction = mfgp::PosteriorPrediction<f64>;
pub type Surrogate = mfgp::Surrogate<f64>;
