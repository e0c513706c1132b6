//! Dense BFGS with a backtracking (Armijo) line search.
//!
//! Only steps that satisfy the sufficient-decrease condition are accepted, so
//! the sequence of accepted objective values never increases. Failed
//! evaluations (returned as `None`) count as rejected trial steps. Trial
//! points are scored by value alone; the gradient is computed once a step is
//! accepted.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iterations: usize,
    /// Stop once `max_i |g_i|` falls below this.
    pub gradient_tolerance: f64,
    /// Sufficient-decrease constant `c1`.
    pub armijo: f64,
    pub max_backtracks: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            armijo: 1e-4,
            max_backtracks: 50,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult<T> {
    pub x: Vec<T>,
    pub value: T,
    pub gradient: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective at the start point and after every accepted step.
    pub trace: Vec<T>,
}

/// A function that can be evaluated with or without its gradient. `None`
/// marks a point where the function is undefined.
pub trait Objective<T> {
    fn value(&mut self, x: &[T]) -> Option<T>;
    fn value_and_gradient(&mut self, x: &[T]) -> Option<(T, Vec<T>)>;
}

impl<T, F> Objective<T> for F
where
    F: FnMut(&[T]) -> Option<(T, Vec<T>)>,
{
    fn value(&mut self, x: &[T]) -> Option<T> {
        self(x).map(|(v, _)| v)
    }

    fn value_and_gradient(&mut self, x: &[T]) -> Option<(T, Vec<T>)> {
        self(x)
    }
}

fn max_abs<T: Real>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| m.max(x.abs()))
}

fn usable<T: Real>(value: T, grad: &[T]) -> bool {
    value.is_finite() && grad.iter().all(|g| g.is_finite())
}

fn eval_full<T: Real, F: Objective<T>>(obj: &mut F, x: &DVector<T>) -> Option<(T, DVector<T>)> {
    let (v, g) = obj.value_and_gradient(x.as_slice())?;
    usable(v, &g).then(|| (v, DVector::from_vec(g)))
}

fn eval_value<T: Real, F: Objective<T>>(obj: &mut F, x: &DVector<T>) -> Option<T> {
    obj.value(x.as_slice()).filter(|v| v.is_finite())
}

/// Minimizes `objective`. Returns `None` if the start point cannot be
/// evaluated.
pub fn minimize<T, F>(mut objective: F, x0: Vec<T>, opts: &BfgsOptions) -> Option<BfgsResult<T>>
where
    T: Real,
    F: Objective<T>,
{
    let n = x0.len();
    let mut x = DVector::from_vec(x0);
    let (mut f, mut g) = eval_full(&mut objective, &x)?;
    let mut trace = vec![f];
    let tol = T::lit(opts.gradient_tolerance);
    let c1 = T::lit(opts.armijo);
    let half = T::lit(0.5);

    if n == 0 {
        return Some(BfgsResult {
            x: Vec::new(),
            value: f,
            gradient: Vec::new(),
            iterations: 0,
            converged: true,
            trace,
        });
    }

    let mut h_inv = DMatrix::<T>::identity(n, n);
    let mut fresh = true;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < opts.max_iterations {
        if max_abs(&g) < tol {
            converged = true;
            break;
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < T::zero()) || !slope.is_finite() {
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        // Without curvature information, cap the first trial step at unit length.
        let mut step = if fresh {
            T::one().min(T::one() / max_abs(&dir))
        } else {
            T::one()
        };

        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial = &x + &dir * step;
            let ft = eval_value(&mut objective, &trial);
            match ft {
                Some(ft) if ft <= f + c1 * step * slope => {
                    if let Some((fg, gt)) = eval_full(&mut objective, &trial) {
                        accepted = Some((trial, fg, gt));
                    }
                    break;
                }
                Some(ft) => {
                    // Minimizer of the quadratic through f, slope and ft, kept in [0.1, 0.5] of the step.
                    let curv = ft - f - slope * step;
                    let q = -slope * step * step / (curv + curv);
                    step = q.max(step * T::lit(0.1)).min(step * half);
                }
                None => step *= half,
            }
        }

        let Some((x_new, f_new, g_new)) = accepted else {
            if fresh {
                break;
            }
            h_inv = DMatrix::identity(n, n);
            fresh = true;
            continue;
        };
        iterations += 1;

        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > T::eps() * s.norm() * y.norm() && sy > T::zero() {
            if fresh {
                h_inv *= sy / y.dot(&y);
            }
            let rho = T::one() / sy;
            let hy = &h_inv * &y;
            let yhy = y.dot(&hy);
            // H ← H - ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            h_inv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            h_inv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            fresh = false;
        }

        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(f);
    }
    if !converged && max_abs(&g) < tol {
        converged = true;
    }

    Some(BfgsResult {
        x: x.as_slice().to_vec(),
        value: f,
        gradient: g.as_slice().to_vec(),
        iterations,
        converged,
        trace,
    })
}
