use nalgebra::DMatrix;

use super::dataset::{Dataset, Standardization};
use super::gram::{assemble, GramBundle};
use super::params::ModelParams;
use super::predict::{predict_with_bundle, PosteriorPrediction};
use crate::error::Result;
use crate::scalar::Real;

/// A fitted model: parameters, the raw training data, the target
/// standardization used in training and the factored covariance.
///
/// Immutable once built, so it can serve predictions from several threads.
pub struct Surrogate<T: Real> {
    params: ModelParams<T>,
    data: Dataset<T>,
    standardization: Standardization<T>,
    jitter: T,
    bundle: GramBundle<T>,
}

impl<T: Real> Surrogate<T> {
    pub fn new(
        params: ModelParams<T>,
        data: Dataset<T>,
        standardization: Standardization<T>,
        jitter: T,
    ) -> Result<Self> {
        let bundle = assemble(&params, &standardization.apply(&data), jitter)?;
        Ok(Self {
            params,
            data,
            standardization,
            jitter,
            bundle,
        })
    }

    pub fn params(&self) -> &ModelParams<T> {
        &self.params
    }

    pub fn data(&self) -> &Dataset<T> {
        &self.data
    }

    pub fn standardization(&self) -> Standardization<T> {
        self.standardization
    }

    pub fn jitter(&self) -> T {
        self.jitter
    }

    pub fn bundle(&self) -> &GramBundle<T> {
        &self.bundle
    }

    /// Training objective on the standardized targets.
    pub fn nll(&self) -> T {
        let n = T::from_usize(self.bundle.n()).expect("size representable");
        let quad = self.bundle.targets().dot(&self.bundle.alpha);
        T::lit(0.5) * (quad + self.bundle.log_det() + n * T::two_pi().ln())
    }

    /// High-fidelity posterior in the original target units.
    pub fn predict(&self, xstar: &DMatrix<T>) -> Result<PosteriorPrediction<T>> {
        let z = predict_with_bundle(&self.params, &self.bundle, xstar)?;
        let Standardization { mean, scale } = self.standardization;
        Ok(PosteriorPrediction {
            mean: z.mean.map(|m| m * scale + mean),
            variance: z.variance.map(|v| v * scale * scale),
        })
    }

    /// Learned features `h(x*)`.
    pub fn features(&self, xstar: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.params.fmap.forward(xstar)
    }
}
