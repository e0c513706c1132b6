use nalgebra::{DMatrix, DVector};

use super::dataset::Dataset;
use super::gram::{assemble, GramBundle};
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::kernel::gram;
use crate::scalar::Real;

/// Posterior mean and variance of the latent high-fidelity function.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorPrediction<T: Real> {
    pub mean: DVector<T>,
    pub variance: DVector<T>,
}

impl<T: Real> PosteriorPrediction<T> {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    pub fn std(&self) -> DVector<T> {
        self.variance.map(|v| v.sqrt())
    }
}

/// Posterior of `f2(h(x*))` given both fidelities.
pub fn predict<T: Real>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    xstar: &DMatrix<T>,
    jitter: T,
) -> Result<PosteriorPrediction<T>> {
    let bundle = assemble(params, data, jitter)?;
    predict_with_bundle(params, &bundle, xstar)
}

/// Same as [`predict`] against an already factored training covariance.
pub fn predict_with_bundle<T: Real>(
    params: &ModelParams<T>,
    bundle: &GramBundle<T>,
    xstar: &DMatrix<T>,
) -> Result<PosteriorPrediction<T>> {
    if xstar.ncols() != params.input_dim() {
        return Err(Error::invalid(format!(
            "queries have {} columns, model expects {}",
            xstar.ncols(),
            params.input_dim()
        )));
    }
    let m = xstar.nrows();
    let n1 = bundle.n1();
    let n = bundle.n();
    let rho = params.rho;
    let hstar = params.fmap.forward(xstar)?;

    // K* = [ρ k1(h*, H1), ρ² k1(h*, H2) + k2(h*, H2)]
    let k1_s1 = gram(&params.k1, &hstar, &bundle.h1)?;
    let k1_s2 = gram(&params.k1, &hstar, &bundle.h2)?;
    let k2_s2 = gram(&params.k2, &hstar, &bundle.h2)?;
    let mut kstar = DMatrix::zeros(m, n);
    kstar.columns_mut(0, n1).copy_from(&(k1_s1 * rho));
    kstar
        .columns_mut(n1, n - n1)
        .copy_from(&(k1_s2 * (rho * rho) + k2_s2));

    let mean = &kstar * &bundle.alpha;

    let prior = rho * rho * params.k1.signal_variance() + params.k2.signal_variance();
    let mut v = kstar.transpose();
    bundle.chol.l_dirty().solve_lower_triangular_mut(&mut v);
    let variance = DVector::from_fn(m, |j, _| {
        let explained = v.column(j).norm_squared();
        let s = prior - explained;
        if s > T::zero() {
            s
        } else {
            T::zero()
        }
    });
    Ok(PosteriorPrediction { mean, variance })
}
