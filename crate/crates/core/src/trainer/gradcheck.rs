//! Finite-difference verification of the analytic NLL gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{init_params, MapSpec, TrainConfig};
use crate::error::Result;
use crate::mfgp::{nll, nll_gradient, Dataset, ModelParams, Standardization, DEFAULT_JITTER};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckEntry {
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
}

impl GradientCheckEntry {
    pub fn abs_error(&self) -> f64 {
        (self.analytic - self.numeric).abs()
    }

    /// `|a - n| / max(|a|, |n|)`, zero when both vanish.
    pub fn rel_error(&self) -> f64 {
        let scale = self.analytic.abs().max(self.numeric.abs());
        if scale == 0.0 {
            0.0
        } else {
            self.abs_error() / scale
        }
    }

    /// Relative error below `rtol`, or absolute error at most `atol`.
    pub fn within(&self, rtol: f64, atol: f64) -> bool {
        self.rel_error() < rtol || self.abs_error() <= atol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientCheckReport {
    pub step: f64,
    pub entries: Vec<GradientCheckEntry>,
}

impl GradientCheckReport {
    /// Largest relative error among entries whose absolute error exceeds `atol`.
    pub fn max_relative_error(&self, atol: f64) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.abs_error() > atol)
            .map(GradientCheckEntry::rel_error)
            .fold(0.0, f64::max)
    }

    pub fn passes(&self, rtol: f64, atol: f64) -> bool {
        self.entries.iter().all(|e| e.within(rtol, atol))
    }

    pub fn entry(&self, name: &str) -> Option<&GradientCheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }
}

/// Central differences of [`nll`] against [`nll_gradient`] at `params`.
/// Frozen feature-map parameters are skipped.
pub fn gradient_check_at<T: Real>(
    params: &ModelParams<T>,
    data: &Dataset<T>,
    jitter: T,
    step: f64,
) -> Result<GradientCheckReport> {
    let analytic = nll_gradient(params, data, jitter)?.to_vec(params);
    let theta = params.to_vec();
    let names = params.names();
    let end = if params.fmap.frozen { params.fmap_offset() } else { params.len() };
    let h = T::lit(step);
    let mut entries = Vec::with_capacity(end);
    for k in 0..end {
        let eval = |delta: T| -> Result<T> {
            let mut t = theta.clone();
            t[k] += delta;
            nll(&params.with_values(&t)?, data, jitter)
        };
        let numeric = (eval(h)? - eval(-h)?) / (h + h);
        entries.push(GradientCheckEntry {
            name: names[k].clone(),
            analytic: analytic[k].to_f64_lossy(),
            numeric: numeric.to_f64_lossy(),
        });
    }
    Ok(GradientCheckReport { step, entries })
}

/// Gradient check at a seeded random parameter point for `map`, on the
/// standardized targets of `data`, with step `1e-6`.
///
/// The point is a training start (see [`init_params`]) with `ρ` and the
/// kernel hyperparameters perturbed so no coordinate sits at a special value,
/// and both noise variances near 0.1. Central differences at step `1e-6`
/// carry roughly `ε·|L|/h` of roundoff, so the check point keeps `K` well
/// conditioned and the objective moderate.
pub fn gradient_check(data: &Dataset<f64>, map: &MapSpec, seed: u64) -> Result<GradientCheckReport> {
    let config = TrainConfig { seed, ..TrainConfig::default() };
    let start: ModelParams<f64> = init_params(&config, map, data.dim(), 0)?;
    let mut values = start.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let jiggle = Normal::new(0.0, 0.3).expect("valid sd");
    let (n1, n2) = start.noise_offsets();
    for v in values.iter_mut().take(start.fmap_offset()) {
        *v += jiggle.sample(&mut rng);
    }
    values[n1] = (1e-1f64).ln() + jiggle.sample(&mut rng);
    values[n2] = (1e-1f64).ln() + jiggle.sample(&mut rng);
    let params = start.with_values(&values)?;
    let z = Standardization::fit(data).apply(data);
    gradient_check_at(&params, &z, DEFAULT_JITTER, 1e-6)
}
