//! Maximum marginal likelihood training with multiple random restarts.

mod bfgs;
mod gradcheck;

pub use bfgs::{minimize, BfgsOptions, BfgsResult, Objective};
pub use gradcheck::{gradient_check, gradient_check_at, GradientCheckEntry, GradientCheckReport};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::feature_map::{identity_map, Architecture, FeatureMap, FeatureMapParams};
use crate::kernel::KernelParams;
use crate::mfgp::{nll, nll_with_gradient, Dataset, ModelParams, Standardization, Surrogate, DEFAULT_JITTER};
use crate::scalar::Real;

/// Which feature map the model uses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MapSpec {
    /// `h(x) = x`: autoregressive co-kriging.
    Identity,
    Network(Architecture),
}

impl MapSpec {
    pub fn is_identity(&self) -> bool {
        matches!(self, MapSpec::Identity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient.
    pub gradient_tolerance: f64,
    pub seed: u64,
    pub freeze_feature_map: bool,
    pub freeze_noise: bool,
    /// Initial (and, with `freeze_noise`, fixed) noise variance of both fidelities.
    pub initial_noise: f64,
    /// Relative base jitter passed to covariance assembly.
    pub jitter: f64,
    /// Run restarts on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iterations: 500,
            gradient_tolerance: 1e-6,
            seed: 0,
            freeze_feature_map: false,
            freeze_noise: false,
            initial_noise: 1e-4,
            jitter: DEFAULT_JITTER,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::invalid("restarts must be at least 1"));
        }
        if !(self.gradient_tolerance > 0.0) {
            return Err(Error::invalid("gradient tolerance must be positive"));
        }
        if !(self.initial_noise > 0.0) || !self.initial_noise.is_finite() {
            return Err(Error::invalid("initial noise must be positive"));
        }
        if !(self.jitter >= 0.0) || !self.jitter.is_finite() {
            return Err(Error::invalid("jitter must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary {
    pub restart: usize,
    pub seed: u64,
    pub initial_nll: f64,
    /// `None` when the restart could not evaluate its start point.
    pub final_nll: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every accepted step (non-increasing).
    pub trace: Vec<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct TrainReport<T: Real> {
    pub best_params: ModelParams<T>,
    /// Objective at `best_params` on the standardized targets.
    pub best_nll: T,
    pub best_restart: usize,
    pub standardization: Standardization<T>,
    pub jitter: T,
    pub per_restart: Vec<RestartSummary>,
}

impl<T: Real> TrainReport<T> {
    /// Fitted model ready for prediction.
    pub fn surrogate(&self, data: &Dataset<T>) -> Result<Surrogate<T>> {
        Surrogate::new(self.best_params.clone(), data.clone(), self.standardization, self.jitter)
    }
}

/// RNG for one restart: the config seed selects the key, the restart index the stream.
fn restart_rng(seed: u64, restart: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    rng
}

/// Starting point for one restart.
///
/// Network weights are drawn from `N(0, 1/input_width)`, biases start at 0,
/// kernels at unit signal variance and lengthscales, `ρ = 1`, and both noise
/// variances at `config.initial_noise`.
pub fn init_params<T: Real>(
    config: &TrainConfig,
    map: &MapSpec,
    input_dim: usize,
    restart: usize,
) -> Result<ModelParams<T>> {
    let fmap = match map {
        MapSpec::Identity => identity_map(input_dim),
        MapSpec::Network(arch) => {
            arch.validate()?;
            if arch.input_width() != input_dim {
                return Err(Error::invalid(format!(
                    "architecture expects {} inputs, data have {input_dim}",
                    arch.input_width()
                )));
            }
            let mut rng = restart_rng(config.seed, restart);
            let mut params = FeatureMapParams::zeros(arch);
            for (layer, spec) in params.layers.iter_mut().zip(&arch.layers) {
                let sd = (1.0 / spec.input_width as f64).sqrt();
                let normal = Normal::new(0.0, sd).expect("positive sd");
                // Row-major draw order so the stream maps to the flattened layout.
                for r in 0..spec.output_width {
                    for c in 0..spec.input_width {
                        layer.weights[(r, c)] = T::lit(normal.sample(&mut rng));
                    }
                }
            }
            FeatureMap {
                arch: arch.clone(),
                params,
                frozen: config.freeze_feature_map,
            }
        }
    };
    let dim = fmap.arch.output_width();
    let log_noise = T::lit(config.initial_noise.ln());
    Ok(ModelParams {
        rho: T::one(),
        k1: KernelParams::unit(dim),
        k2: KernelParams::unit(dim),
        fmap,
        log_noise1: log_noise,
        log_noise2: log_noise,
    })
}

/// Indices into [`ModelParams::to_vec`] that the optimizer may move.
pub fn trainable_indices<T: Real>(params: &ModelParams<T>, freeze_noise: bool) -> Vec<usize> {
    let fmap_start = params.fmap_offset();
    let (n1, n2) = params.noise_offsets();
    let end = if params.fmap.frozen { fmap_start } else { params.len() };
    (0..end)
        .filter(|i| !(freeze_noise && (*i == n1 || *i == n2)))
        .collect()
}

struct RestartOutcome<T: Real> {
    summary: RestartSummary,
    params: Option<(ModelParams<T>, T)>,
}

struct RestartObjective<'a, T: Real, E> {
    expand: &'a E,
    free: &'a [usize],
    data: &'a Dataset<T>,
    jitter: T,
}

impl<T: Real, E: Fn(&[T]) -> Result<ModelParams<T>>> Objective<T> for RestartObjective<'_, T, E> {
    fn value(&mut self, x: &[T]) -> Option<T> {
        nll(&(self.expand)(x).ok()?, self.data, self.jitter).ok()
    }

    fn value_and_gradient(&mut self, x: &[T]) -> Option<(T, Vec<T>)> {
        let p = (self.expand)(x).ok()?;
        let (v, g) = nll_with_gradient(&p, self.data, self.jitter).ok()?;
        let g = g.to_vec(&p);
        Some((v, self.free.iter().map(|&i| g[i]).collect()))
    }
}

fn run_restart<T: Real>(
    data: &Dataset<T>,
    map: &MapSpec,
    config: &TrainConfig,
    restart: usize,
) -> RestartOutcome<T> {
    let jitter = T::lit(config.jitter);
    let failed = |error: String| RestartOutcome {
        summary: RestartSummary {
            restart,
            seed: config.seed,
            initial_nll: f64::NAN,
            final_nll: None,
            iterations: 0,
            converged: false,
            trace: Vec::new(),
            error: Some(error),
        },
        params: None,
    };

    let start = match init_params::<T>(config, map, data.dim(), restart) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    let free = trainable_indices(&start, config.freeze_noise);
    let full0 = start.to_vec();
    let x0: Vec<T> = free.iter().map(|&i| full0[i]).collect();

    let expand = |x: &[T]| {
        let mut full = full0.clone();
        for (&i, v) in free.iter().zip(x) {
            full[i] = *v;
        }
        start.with_values(&full)
    };
    let objective = RestartObjective {
        expand: &expand,
        free: &free,
        data,
        jitter,
    };

    let opts = BfgsOptions {
        max_iterations: config.max_iterations,
        gradient_tolerance: config.gradient_tolerance,
        ..BfgsOptions::default()
    };
    let Some(result) = minimize(objective, x0, &opts) else {
        return failed("objective could not be evaluated at the start point".into());
    };
    let params = match expand(&result.x) {
        Ok(p) => p,
        Err(e) => return failed(e.to_string()),
    };
    RestartOutcome {
        summary: RestartSummary {
            restart,
            seed: config.seed,
            initial_nll: result.trace[0].to_f64_lossy(),
            final_nll: Some(result.value.to_f64_lossy()),
            iterations: result.iterations,
            converged: result.converged,
            trace: result.trace.iter().map(|v| v.to_f64_lossy()).collect(),
            error: None,
        },
        params: Some((params, result.value)),
    }
}

/// Fits the model by minimizing the negative log marginal likelihood of the
/// standardized targets from `config.restarts` starting points and keeps the
/// best.
pub fn train<T: Real>(data: &Dataset<T>, map: &MapSpec, config: &TrainConfig) -> Result<TrainReport<T>> {
    config.validate()?;
    data.validate()?;
    let standardization = Standardization::fit(data);
    let z = standardization.apply(data);

    let outcomes: Vec<RestartOutcome<T>> = if config.parallel {
        (0..config.restarts)
            .into_par_iter()
            .map(|r| run_restart(&z, map, config, r))
            .collect()
    } else {
        (0..config.restarts).map(|r| run_restart(&z, map, config, r)).collect()
    };

    let mut best: Option<(usize, ModelParams<T>, T)> = None;
    let mut per_restart = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        if let Some((p, v)) = o.params {
            if best.as_ref().is_none_or(|(_, _, b)| v < *b) {
                best = Some((o.summary.restart, p, v));
            }
        }
        per_restart.push(o.summary);
    }
    let Some((best_restart, best_params, best_nll)) = best else {
        let reasons: Vec<String> = per_restart
            .iter()
            .map(|s| format!("restart {}: {}", s.restart, s.error.as_deref().unwrap_or("unknown")))
            .collect();
        return Err(Error::TrainingFailed(reasons.join("; ")));
    };
    Ok(TrainReport {
        best_params,
        best_nll,
        best_restart,
        standardization,
        jitter: T::lit(config.jitter),
        per_restart,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfgp::{nll, nll_gradient, sample_prior};
    use nalgebra::{DMatrix, DVector};

    fn small_data() -> Dataset<f64> {
        let x1: Vec<f64> = (0..12).map(|i| i as f64 / 11.0).collect();
        let f1: Vec<f64> = x1.iter().map(|x| (5.0 * x).sin() + if *x > 0.5 { 1.0 } else { 0.0 }).collect();
        let x2 = vec![0.1, 0.35, 0.62, 0.9];
        let f2: Vec<f64> = x2.iter().map(|x: &f64| 2.0 * (5.0 * x).sin() + if *x > 0.5 { 3.0 } else { 0.0 }).collect();
        Dataset::new(
            DMatrix::from_column_slice(12, 1, &x1),
            DVector::from_vec(f1),
            DMatrix::from_column_slice(4, 1, &x2),
            DVector::from_vec(f2),
        )
        .unwrap()
    }

    #[test]
    fn init_is_deterministic_and_stream_separated() {
        let cfg = TrainConfig { seed: 3, ..TrainConfig::default() };
        let map = MapSpec::Network(Architecture::default_sigmoid(1));
        let a: ModelParams<f64> = init_params(&cfg, &map, 1, 0).unwrap();
        let b: ModelParams<f64> = init_params(&cfg, &map, 1, 0).unwrap();
        let c: ModelParams<f64> = init_params(&cfg, &map, 1, 1).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.fmap.params, c.fmap.params);
        assert_eq!(a.rho, 1.0);
        assert_eq!(a.k1, KernelParams::unit(2));
        assert!((a.noise1() - 1e-4).abs() < 1e-16);
        assert!(a.fmap.params.layers.iter().all(|l| l.bias.iter().all(|b| *b == 0.0)));
    }

    #[test]
    fn identity_mode_is_frozen() {
        let p: ModelParams<f64> = init_params(&TrainConfig::default(), &MapSpec::Identity, 1, 0).unwrap();
        assert!(p.fmap.frozen && p.fmap.is_identity());
        assert_eq!(trainable_indices(&p, false).len(), p.fmap_offset());
        assert_eq!(trainable_indices(&p, true).len(), p.fmap_offset() - 2);
    }

    #[test]
    fn rejects_bad_config() {
        let data = small_data();
        let cfg = TrainConfig { restarts: 0, ..TrainConfig::default() };
        assert!(train(&data, &MapSpec::Identity, &cfg).is_err());
        let map = MapSpec::Network(Architecture::default_sigmoid(2));
        assert!(train(&data, &map, &TrainConfig::default()).is_err());
    }

    #[test]
    fn training_descends_and_selects_best() {
        let data = small_data();
        let cfg = TrainConfig { restarts: 3, max_iterations: 200, seed: 1, ..TrainConfig::default() };
        let map = MapSpec::Network(Architecture::default_sigmoid(1));
        let report = train(&data, &map, &cfg).unwrap();
        for s in &report.per_restart {
            assert!(s.trace.windows(2).all(|w| w[1] <= w[0]));
            assert!(s.final_nll.unwrap() <= s.initial_nll);
            assert!(report.best_nll <= s.final_nll.unwrap());
        }
        let z = report.standardization.apply(&data);
        let again = nll(&report.best_params, &z, cfg.jitter).unwrap();
        assert!((again - report.best_nll).abs() <= 1e-10 * report.best_nll.abs().max(1.0));
        let model = report.surrogate(&data).unwrap();
        assert!((model.nll() - report.best_nll).abs() <= 1e-10 * report.best_nll.abs().max(1.0));
    }

    #[test]
    fn converged_restart_has_small_gradient() {
        let data = small_data();
        let cfg = TrainConfig { restarts: 2, seed: 5, ..TrainConfig::default() };
        let report = train(&data, &MapSpec::Identity, &cfg).unwrap();
        let best = &report.per_restart[report.best_restart];
        assert!(best.converged);
        let z = report.standardization.apply(&data);
        let g = nll_gradient(&report.best_params, &z, cfg.jitter).unwrap().to_vec(&report.best_params);
        let free = trainable_indices(&report.best_params, false);
        assert!(free.iter().all(|&i| g[i].abs() < cfg.gradient_tolerance));
    }

    #[test]
    fn reproducible_and_parallel_independent() {
        let data = small_data();
        let map = MapSpec::Network(Architecture::default_sigmoid(1));
        let cfg = TrainConfig { restarts: 3, max_iterations: 60, seed: 9, ..TrainConfig::default() };
        let a = train(&data, &map, &cfg).unwrap();
        let b = train(&data, &map, &TrainConfig { parallel: false, ..cfg.clone() }).unwrap();
        assert_eq!(a.best_params, b.best_params);
        assert_eq!(a.per_restart, b.per_restart);
    }

    #[test]
    fn starting_at_generating_params_does_not_increase_nll() {
        let cfg = TrainConfig { restarts: 1, max_iterations: 50, ..TrainConfig::default() };
        let map = MapSpec::Network(Architecture::default_sigmoid(1));
        let truth: ModelParams<f64> = init_params(&cfg, &map, 1, 0).unwrap();
        let x = DMatrix::from_fn(15, 1, |i, _| i as f64 / 14.0);
        let (f1, f2) = sample_prior(&truth, &x, 2, 1e-8).unwrap();
        let data = Dataset::new(
            x.rows(0, 12).into_owned(),
            f1.rows(0, 12).into_owned(),
            x.rows(12, 3).into_owned(),
            f2.rows(12, 3).into_owned(),
        )
        .unwrap();
        // With restart 0 and the same config, training starts at `truth`.
        let report = train(&data, &map, &cfg).unwrap();
        let s = &report.per_restart[0];
        let z = report.standardization.apply(&data);
        assert_eq!(s.initial_nll, nll(&truth, &z, cfg.jitter).unwrap());
        assert!(s.final_nll.unwrap() <= s.initial_nll);
    }
}
