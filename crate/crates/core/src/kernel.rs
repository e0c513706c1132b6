//! Squared-exponential ARD covariance
//!
//! `k(u, v) = s² exp(-½ Σ_d ((u_d - v_d) / ℓ_d)²)`
//!
//! Hyperparameters live in log space. Point sets are matrices with one point
//! per row.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelParams<T> {
    /// log s²
    pub log_signal_variance: T,
    /// log ℓ_d, one per feature dimension
    pub log_lengthscales: Vec<T>,
}

impl<T: Real> KernelParams<T> {
    /// Unit signal variance and unit lengthscales.
    pub fn unit(dim: usize) -> Self {
        Self {
            log_signal_variance: T::zero(),
            log_lengthscales: vec![T::zero(); dim],
        }
    }

    pub fn new(signal_variance: T, lengthscales: &[T]) -> Self {
        Self {
            log_signal_variance: signal_variance.ln(),
            log_lengthscales: lengthscales.iter().map(|l| l.ln()).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    /// Number of scalar hyperparameters (signal variance + lengthscales).
    pub fn n_params(&self) -> usize {
        1 + self.dim()
    }

    pub fn signal_variance(&self) -> T {
        self.log_signal_variance.exp()
    }

    pub fn lengthscales(&self) -> Vec<T> {
        self.log_lengthscales.iter().map(|l| l.exp()).collect()
    }

    fn inv_sq_lengthscales(&self) -> Vec<T> {
        self.log_lengthscales
            .iter()
            .map(|l| (-(*l + *l)).exp())
            .collect()
    }

    fn check_dim(&self, cols: usize, what: &str) -> Result<()> {
        if cols != self.dim() {
            return Err(Error::invalid(format!(
                "{what} has dimension {cols}, kernel expects {}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Kernel value for a single pair of points.
pub fn se_ard_eval<T: Real>(params: &KernelParams<T>, u: &[T], v: &[T]) -> Result<T> {
    params.check_dim(u.len(), "u")?;
    params.check_dim(v.len(), "v")?;
    let inv_l2 = params.inv_sq_lengthscales();
    let r2 = u
        .iter()
        .zip(v)
        .zip(&inv_l2)
        .fold(T::zero(), |acc, ((a, b), w)| {
            let d = *a - *b;
            acc + d * d * *w
        });
    Ok(params.signal_variance() * (-r2 * T::lit(0.5)).exp())
}

fn check_pair<T: Real>(params: &KernelParams<T>, u: &DMatrix<T>, v: &DMatrix<T>) -> Result<()> {
    params.check_dim(u.ncols(), "U")?;
    params.check_dim(v.ncols(), "V")
}

fn gram_unchecked<T: Real>(
    sf2: T,
    inv_l2: &[T],
    u: &DMatrix<T>,
    v: &DMatrix<T>,
) -> DMatrix<T> {
    let half = T::lit(0.5);
    DMatrix::from_fn(u.nrows(), v.nrows(), |i, j| {
        let mut r2 = T::zero();
        for (d, w) in inv_l2.iter().enumerate() {
            let diff = u[(i, d)] - v[(j, d)];
            r2 += diff * diff * *w;
        }
        sf2 * (-r2 * half).exp()
    })
}

/// Gram matrix `G[i, j] = k(U_i, V_j)`.
pub fn gram<T: Real>(params: &KernelParams<T>, u: &DMatrix<T>, v: &DMatrix<T>) -> Result<DMatrix<T>> {
    check_pair(params, u, v)?;
    Ok(gram_unchecked(
        params.signal_variance(),
        &params.inv_sq_lengthscales(),
        u,
        v,
    ))
}

/// Derivatives of the Gram matrix with respect to each log-hyperparameter.
///
/// Index 0 is `log s²` (and equals the Gram matrix itself); index `1 + d` is
/// `log ℓ_d`, with entries `k · ((u_d - v_d) / ℓ_d)²`.
pub fn gram_grad_hyper<T: Real>(
    params: &KernelParams<T>,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
) -> Result<Vec<DMatrix<T>>> {
    check_pair(params, u, v)?;
    let inv_l2 = params.inv_sq_lengthscales();
    let k = gram_unchecked(params.signal_variance(), &inv_l2, u, v);
    let mut out = Vec::with_capacity(params.n_params());
    out.push(k.clone());
    for (d, w) in inv_l2.iter().enumerate() {
        out.push(DMatrix::from_fn(u.nrows(), v.nrows(), |i, j| {
            let diff = u[(i, d)] - v[(j, d)];
            k[(i, j)] * diff * diff * *w
        }));
    }
    Ok(out)
}

/// Derivatives of the Gram matrix with respect to the first argument.
///
/// Element `d` of the result holds `∂k(U_i, V_j) / ∂U_{i,d}` at `(i, j)`,
/// which is `k(U_i, V_j) · (V_{j,d} - U_{i,d}) / ℓ_d²`. The derivative with
/// respect to `V_{j,d}` is the negation.
pub fn gram_grad_inputs<T: Real>(
    params: &KernelParams<T>,
    u: &DMatrix<T>,
    v: &DMatrix<T>,
) -> Result<Vec<DMatrix<T>>> {
    check_pair(params, u, v)?;
    let inv_l2 = params.inv_sq_lengthscales();
    let k = gram_unchecked(params.signal_variance(), &inv_l2, u, v);
    Ok(inv_l2
        .iter()
        .enumerate()
        .map(|(d, w)| {
            DMatrix::from_fn(u.nrows(), v.nrows(), |i, j| {
                k[(i, j)] * (v[(j, d)] - u[(i, d)]) * *w
            })
        })
        .collect())
}
