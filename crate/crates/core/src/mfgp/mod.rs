//! Two-fidelity Gaussian process on learned features.
//!
//! `[f1(h); f2(h)] ~ GP(0, [[k1, ρ k1], [ρ k1, ρ² k1 + k2]])` with
//! `h = h(x)` produced by a [`FeatureMap`](crate::feature_map::FeatureMap).
//! With the identity map this is the classical autoregressive co-kriging
//! model.

mod dataset;
mod gram;
mod params;
mod predict;
mod sample;
mod surrogate;

pub use dataset::{Dataset, Standardization};
pub use gram::{assemble, nll, nll_gradient, nll_with_gradient, GramBundle, DEFAULT_JITTER, MAX_JITTER};
pub use params::{ModelGradient, ModelParams, NOISE_FLOOR};
pub use predict::{predict, predict_with_bundle, PosteriorPrediction};
pub use sample::{joint_prior_covariance, sample_prior, sample_prior_features};
pub use surrogate::Surrogate;
