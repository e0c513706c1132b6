//! Joint covariance assembly, negative log marginal likelihood and its
//! analytic gradient.
//!
//! With stacked features `H = [H1; H2]` the training covariance is
//!
//! ```text
//! K = | k1(H1,H1) + s1 I        ρ k1(H1,H2)                   |
//!     | ρ k1(H2,H1)             ρ² k1(H2,H2) + k2(H2,H2) + s2 I |
//! ```
//!
//! and factorization happens on `K + j I` where `j = rel · mean(diag K)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::dataset::Dataset;
use super::params::{floored_noise, ModelGradient, ModelParams};
use crate::error::{Error, Result};
use crate::feature_map;
use crate::kernel::{gram, gram_grad_hyper, gram_grad_inputs};
use crate::scalar::Real;

/// Default relative jitter.
pub const DEFAULT_JITTER: f64 = 1e-8;
/// Escalation stops after this relative jitter.
pub const MAX_JITTER: f64 = 1e-2;

pub struct GramBundle<T: Real> {
    /// Training covariance without jitter.
    pub k: DMatrix<T>,
    /// Lower Cholesky factor of `k + jitter_abs · I`.
    pub chol: Cholesky<T, Dyn>,
    /// `(K + jitter_abs I)^{-1} f`
    pub alpha: DVector<T>,
    pub h1: DMatrix<T>,
    pub h2: DMatrix<T>,
    /// Relative jitter that succeeded.
    pub jitter: T,
    pub jitter_abs: T,
    /// `k1` over all stacked features, kept for the gradient.
    k1_full: DMatrix<T>,
    f: DVector<T>,
}

impl<T: Real> GramBundle<T> {
    pub fn n1(&self) -> usize {
        self.h1.nrows()
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn log_det(&self) -> T {
        let l = self.chol.l_dirty();
        (0..self.n()).fold(T::zero(), |acc, i| acc + l[(i, i)].ln()) * T::lit(2.0)
    }

    /// `fᵀ(K + jI)⁻¹f` as `‖L⁻¹f‖²`.
    pub fn quadratic_form(&self) -> T {
        self.chol
            .l_dirty()
            .solve_lower_triangular(&self.f)
            .map(|z| z.norm_squared())
            .unwrap_or_else(|| self.f.dot(&self.alpha))
    }

    pub fn targets(&self) -> &DVector<T> {
        &self.f
    }
}

fn jitter_levels<T: Real>(base: T) -> Vec<T> {
    let max = T::lit(MAX_JITTER * (1.0 + 1e-9));
    let ten = T::lit(10.0);
    let mut levels = Vec::new();
    let mut rel = if base > T::zero() {
        base
    } else {
        levels.push(T::zero());
        T::lit(DEFAULT_JITTER)
    };
    while rel <= max {
        levels.push(rel);
        rel *= ten;
    }
    levels
}

/// Cholesky of `k + rel · mean(diag k) · I`, escalating `rel` tenfold from
/// `base` until it succeeds or exceeds [`MAX_JITTER`].
pub(crate) fn factor_with_jitter<T: Real>(
    k: &DMatrix<T>,
    base: T,
) -> Result<(Cholesky<T, Dyn>, T, T)> {
    if base < T::zero() || !base.is_finite() {
        return Err(Error::invalid("jitter must be finite and non-negative"));
    }
    let n = k.nrows();
    let mean_diag = if n == 0 {
        T::zero()
    } else {
        k.trace() / T::from_usize(n).expect("size representable")
    };
    let mut last = base;
    for rel in jitter_levels(base) {
        last = rel;
        let abs = rel * mean_diag;
        let mut m = k.clone();
        for i in 0..n {
            m[(i, i)] += abs;
        }
        if let Some(c) = m.cholesky() {
            let l = c.l_dirty();
            if (0..n).all(|i| l[(i, i)] > T::zero() && l[(i, i)].is_finite()) {
                return Ok((c, rel, abs));
            }
        }
    }
    Err(Error::NotPositiveDefinite {
        jitter: last.to_f64_lossy(),
    })
}

fn check_inputs<T: Real>(params: &ModelParams<T>, data: &Dataset<T>) -> Result<()> {
    params.validate()?;
    data.validate()?;
    if data.dim() != params.input_dim() {
        return Err(Error::invalid(format!(
            "data have {} input columns, model expects {}",
            data.dim(),
            params.input_dim()
        )));
    }
    Ok(())
}

/// Builds the training covariance and factors it.
pub fn assemble<T: Real>(params: &ModelParams<T>, data: &Dataset<T>, jitter: T) -> Result<GramBundle<T>> {
    check_inputs(params, data)?;
    let (n1, n2) = (data.n1(), data.n2());
    let n = n1 + n2;
    let h = feature_map::forward(&params.fmap.arch, &params.fmap.params, &data.stacked_x())?;
    let h1 = h.rows(0, n1).into_owned();
    let h2 = h.rows(n1, n2).into_owned();

    let k1_full = gram(&params.k1, &h, &h)?;
    let k2_22 = gram(&params.k2, &h2, &h2)?;
    let rho = params.rho;
    let (s1, s2) = (params.noise1(), params.noise2());

    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let v = k1_full[(i, j)];
            k[(i, j)] = match (i < n1, j < n1) {
                (true, true) => v,
                (false, false) => rho * rho * v + k2_22[(i - n1, j - n1)],
                _ => rho * v,
            };
        }
    }
    for i in 0..n {
        k[(i, i)] += if i < n1 { s1 } else { s2 };
    }

    let (chol, rel, abs) = factor_with_jitter(&k, jitter)?;
    let f = data.stacked_f();
    let alpha = chol.solve(&f);
    Ok(GramBundle {
        k,
        chol,
        alpha,
        h1,
        h2,
        jitter: rel,
        jitter_abs: abs,
        k1_full,
        f,
    })
}

fn nll_from_bundle<T: Real>(b: &GramBundle<T>) -> T {
    let n = T::from_usize(b.n()).expect("size representable");
    let quad = b.quadratic_form();
    let two_pi = T::two_pi();
    T::lit(0.5) * quad + T::lit(0.5) * b.log_det() + T::lit(0.5) * n * two_pi.ln()
}

/// `½ fᵀK⁻¹f + ½ log|K| + (n/2) log 2π`
pub fn nll<T: Real>(params: &ModelParams<T>, data: &Dataset<T>, jitter: T) -> Result<T> {
    Ok(nll_from_bundle(&assemble(params, data, jitter)?))
}

/// Gradient of [`nll`] with respect to every parameter.
pub fn nll_gradient<T: Real>(params: &ModelParams<T>, data: &Dataset<T>, jitter: T) -> Result<ModelGradient<T>> {
    Ok(nll_with_gradient(params, data, jitter)?.1)
}

/// Value and gradient from a single factorization.
pub fn nll_with_gradient<T: Real>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    jitter: T,
) -> Result<(T, ModelGradient<T>)> {
    let b = assemble(params, data, jitter)?;
    let value = nll_from_bundle(&b);
    let grad = gradient_from_bundle(params, data, &b)?;
    Ok((value, grad))
}

fn weighted_sum<T: Real>(w: &DMatrix<T>, m: &DMatrix<T>) -> T {
    w.iter().zip(m.iter()).fold(T::zero(), |acc, (a, b)| acc + *a * *b)
}

fn gradient_from_bundle<T: Real>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    b: &GramBundle<T>,
) -> Result<ModelGradient<T>> {
    let n = b.n();
    let n1 = b.n1();
    let n2 = n - n1;
    let half = T::lit(0.5);
    let two = T::lit(2.0);
    let rho = params.rho;

    // ∂L/∂K = ½ (K⁻¹ - α αᵀ)
    let kinv = b.chol.inverse();
    let mut g = (&kinv - &b.alpha * b.alpha.transpose()) * half;
    // The absolute jitter is rel · tr(K) / n, so it feeds back into the diagonal.
    let jitter_feedback = b.jitter * g.trace() / T::from_usize(n).expect("size representable");
    for i in 0..n {
        g[(i, i)] += jitter_feedback;
    }

    let g12 = g.view((0, n1), (n1, n2));
    let g22 = g.view((n1, n1), (n2, n2)).into_owned();

    let k1_12 = b.k1_full.view((0, n1), (n1, n2));
    let k1_22 = b.k1_full.view((n1, n1), (n2, n2));
    let d_rho = two * g12.iter().zip(k1_12.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y)
        + two * rho * g22.iter().zip(k1_22.iter()).fold(T::zero(), |a, (x, y)| a + *x * *y);

    // k1 enters every block with weight c_i c_j, c = (1, …, 1, ρ, …, ρ).
    let w1 = DMatrix::from_fn(n, n, |i, j| {
        let ci = if i < n1 { T::one() } else { rho };
        let cj = if j < n1 { T::one() } else { rho };
        g[(i, j)] * ci * cj
    });

    let h = {
        let mut h = DMatrix::zeros(n, b.h1.ncols());
        h.rows_mut(0, n1).copy_from(&b.h1);
        h.rows_mut(n1, n2).copy_from(&b.h2);
        h
    };

    let d_k1 = gram_grad_hyper(&params.k1, &h, &h)?
        .iter()
        .map(|dk| weighted_sum(&w1, dk))
        .collect();
    let d_k2 = gram_grad_hyper(&params.k2, &b.h2, &b.h2)?
        .iter()
        .map(|dk| weighted_sum(&g22, dk))
        .collect();

    let (s1, floored1) = floored_noise(params.log_noise1);
    let (s2, floored2) = floored_noise(params.log_noise2);
    let tr11 = (0..n1).fold(T::zero(), |a, i| a + g[(i, i)]);
    let tr22 = (n1..n).fold(T::zero(), |a, i| a + g[(i, i)]);
    let d_noise1 = if floored1 { T::zero() } else { s1 * tr11 };
    let d_noise2 = if floored2 { T::zero() } else { s2 * tr22 };

    let d_fmap = if params.fmap.frozen {
        None
    } else {
        let dim = h.ncols();
        let mut adjoint = DMatrix::zeros(n, dim);
        let t1 = gram_grad_inputs(&params.k1, &h, &h)?;
        let t2 = gram_grad_inputs(&params.k2, &b.h2, &b.h2)?;
        for d in 0..dim {
            for i in 0..n {
                let mut acc = T::zero();
                for l in 0..n {
                    acc += w1[(i, l)] * t1[d][(i, l)];
                }
                if i >= n1 {
                    for l in 0..n2 {
                        acc += g22[(i - n1, l)] * t2[d][(i - n1, l)];
                    }
                }
                adjoint[(i, d)] = two * acc;
            }
        }
        Some(feature_map::backward(
            &params.fmap.arch,
            &params.fmap.params,
            &data.stacked_x(),
            &adjoint,
        )?)
    };

    Ok(ModelGradient {
        rho: d_rho,
        k1: d_k1,
        k2: d_k2,
        log_noise1: d_noise1,
        log_noise2: d_noise2,
        fmap: d_fmap,
    })
}
