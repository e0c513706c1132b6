use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::gram::factor_with_jitter;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::kernel::{gram, KernelParams};
use crate::scalar::Real;

/// Noise-free joint prior covariance of `[f1(H); f2(H)]` (`2n × 2n`).
pub fn joint_prior_covariance<T: Real>(
    rho: T,
    k1: &KernelParams<T>,
    k2: &KernelParams<T>,
    h: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    let n = h.nrows();
    let a = gram(k1, h, h)?;
    let b = gram(k2, h, h)?;
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    k.view_mut((0, 0), (n, n)).copy_from(&a);
    k.view_mut((0, n), (n, n)).copy_from(&(&a * rho));
    k.view_mut((n, 0), (n, n)).copy_from(&(&a * rho));
    k.view_mut((n, n), (n, n)).copy_from(&(&a * (rho * rho) + b));
    Ok(k)
}

/// One joint draw of `(f1, f2)` at precomputed features `h`.
pub fn sample_prior_features<T: Real>(
    rho: T,
    k1: &KernelParams<T>,
    k2: &KernelParams<T>,
    h: &DMatrix<T>,
    seed: u64,
    jitter: T,
) -> Result<(DVector<T>, DVector<T>)> {
    let n = h.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot sample at zero points"));
    }
    let k = joint_prior_covariance(rho, k1, k2, h)?;
    let (chol, _, _) = factor_with_jitter(&k, jitter)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = DVector::from_fn(2 * n, |_, _| {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::lit(v)
    });
    let draw = chol.l_dirty().lower_triangle() * z;
    Ok((draw.rows(0, n).into_owned(), draw.rows(n, n).into_owned()))
}

/// One joint draw from the prior at inputs `x` mapped through the model's
/// feature map. Deterministic in `seed`.
pub fn sample_prior<T: Real>(
    params: &ModelParams<T>,
    x: &DMatrix<T>,
    seed: u64,
    jitter: T,
) -> Result<(DVector<T>, DVector<T>)> {
    params.validate()?;
    let h = params.fmap.forward(x)?;
    sample_prior_features(params.rho, &params.k1, &params.k2, &h, seed, jitter)
}
