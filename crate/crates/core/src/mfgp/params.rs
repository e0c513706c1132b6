use crate::error::{Error, Result};
use crate::feature_map::{FeatureMap, FeatureMapParams};
use crate::kernel::KernelParams;
use crate::scalar::Real;

/// Lower bound on either observation-noise variance.
pub const NOISE_FLOOR: f64 = 1e-8;

/// Full parameter set: coupling `rho`, low-fidelity kernel `k1`, discrepancy
/// kernel `k2`, the feature map and per-fidelity log noise variances.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T: Real> {
    pub rho: T,
    pub k1: KernelParams<T>,
    pub k2: KernelParams<T>,
    pub fmap: FeatureMap<T>,
    pub log_noise1: T,
    pub log_noise2: T,
}

#[inline]
pub(crate) fn floored_noise<T: Real>(log_noise: T) -> (T, bool) {
    let v = log_noise.exp();
    let floor = T::lit(NOISE_FLOOR);
    if v < floor {
        (floor, true)
    } else {
        (v, false)
    }
}

impl<T: Real> ModelParams<T> {
    pub fn noise1(&self) -> T {
        floored_noise(self.log_noise1).0
    }

    pub fn noise2(&self) -> T {
        floored_noise(self.log_noise2).0
    }

    pub fn feature_dim(&self) -> usize {
        self.fmap.arch.output_width()
    }

    pub fn input_dim(&self) -> usize {
        self.fmap.arch.input_width()
    }

    pub fn validate(&self) -> Result<()> {
        self.fmap.arch.validate()?;
        self.fmap.params.check(&self.fmap.arch)?;
        let d = self.feature_dim();
        if self.k1.dim() != d || self.k2.dim() != d {
            return Err(Error::invalid(format!(
                "kernel dimensions ({}, {}) differ from feature dimension {d}",
                self.k1.dim(),
                self.k2.dim()
            )));
        }
        let scalars = [self.rho, self.k1.log_signal_variance, self.k2.log_signal_variance, self.log_noise1, self.log_noise2];
        let finite = scalars
            .iter()
            .chain(&self.k1.log_lengthscales)
            .chain(&self.k2.log_lengthscales)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("non-finite model parameter"));
        }
        Ok(())
    }

    /// Number of scalars in [`to_vec`](Self::to_vec).
    pub fn len(&self) -> usize {
        1 + self.k1.n_params() + self.k2.n_params() + 2 + self.fmap.arch.n_params()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `[rho, k1.., k2.., log_noise1, log_noise2, θ_h..]`
    pub fn to_vec(&self) -> Vec<T> {
        let mut v = Vec::with_capacity(self.len());
        v.push(self.rho);
        v.push(self.k1.log_signal_variance);
        v.extend(&self.k1.log_lengthscales);
        v.push(self.k2.log_signal_variance);
        v.extend(&self.k2.log_lengthscales);
        v.push(self.log_noise1);
        v.push(self.log_noise2);
        v.extend(self.fmap.params.to_vec());
        v
    }

    /// Copy of `self` with every scalar replaced from `values` (same order as
    /// [`to_vec`](Self::to_vec)). Architecture and frozen flag are kept.
    pub fn with_values(&self, values: &[T]) -> Result<Self> {
        if values.len() != self.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.len(),
                values.len()
            )));
        }
        let d1 = self.k1.dim();
        let d2 = self.k2.dim();
        let mut i = 0;
        let mut take = |n: usize| {
            let s = &values[i..i + n];
            i += n;
            s
        };
        let rho = take(1)[0];
        let k1 = KernelParams {
            log_signal_variance: take(1)[0],
            log_lengthscales: take(d1).to_vec(),
        };
        let k2 = KernelParams {
            log_signal_variance: take(1)[0],
            log_lengthscales: take(d2).to_vec(),
        };
        let log_noise1 = take(1)[0];
        let log_noise2 = take(1)[0];
        let fmap_values = take(self.fmap.arch.n_params());
        let fmap = FeatureMap {
            arch: self.fmap.arch.clone(),
            params: FeatureMapParams::from_slice(&self.fmap.arch, fmap_values)?,
            frozen: self.fmap.frozen,
        };
        Ok(Self {
            rho,
            k1,
            k2,
            fmap,
            log_noise1,
            log_noise2,
        })
    }

    /// Human-readable name of each entry of [`to_vec`](Self::to_vec).
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["rho".to_string(), "k1.log_sf2".to_string()];
        names.extend((0..self.k1.dim()).map(|d| format!("k1.log_ell[{d}]")));
        names.push("k2.log_sf2".into());
        names.extend((0..self.k2.dim()).map(|d| format!("k2.log_ell[{d}]")));
        names.push("log_noise1".into());
        names.push("log_noise2".into());
        for (l, s) in self.fmap.arch.layers.iter().enumerate() {
            for r in 0..s.output_width {
                for c in 0..s.input_width {
                    names.push(format!("w{}[{r},{c}]", l + 1));
                }
            }
            for r in 0..s.output_width {
                names.push(format!("b{}[{r}]", l + 1));
            }
        }
        names
    }

    /// Offset of the first feature-map scalar in [`to_vec`](Self::to_vec).
    pub fn fmap_offset(&self) -> usize {
        1 + self.k1.n_params() + self.k2.n_params() + 2
    }

    /// Offsets of the two log-noise scalars.
    pub fn noise_offsets(&self) -> (usize, usize) {
        let o = self.fmap_offset();
        (o - 2, o - 1)
    }
}

/// Gradient of the negative log marginal likelihood, laid out like
/// [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGradient<T: Real> {
    pub rho: T,
    pub k1: Vec<T>,
    pub k2: Vec<T>,
    pub log_noise1: T,
    pub log_noise2: T,
    /// `None` when the feature map is frozen.
    pub fmap: Option<FeatureMapParams<T>>,
}

impl<T: Real> ModelGradient<T> {
    /// Same order as [`ModelParams::to_vec`]; a frozen map contributes zeros.
    pub fn to_vec(&self, params: &ModelParams<T>) -> Vec<T> {
        let mut v = Vec::with_capacity(params.len());
        v.push(self.rho);
        v.extend(&self.k1);
        v.extend(&self.k2);
        v.push(self.log_noise1);
        v.push(self.log_noise2);
        match &self.fmap {
            Some(g) => v.extend(g.to_vec()),
            None => v.extend(std::iter::repeat_n(T::zero(), params.fmap.arch.n_params())),
        }
        v
    }
}
