//! Test-only reference implementations and instance generators.
//!
//! `Ar1Oracle` is a direct Kennedy–O'Hagan co-kriging model written against
//! the raw inputs: covariance entries are built one pair at a time from the
//! fidelity labels, and solves use an LU factorization. It shares no code
//! with the library beyond nalgebra.

#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dmfgp::feature_map::{Architecture, FeatureMap, FeatureMapParams};
use dmfgp::kernel::KernelParams;
use dmfgp::mfgp::{sample_prior, Dataset, ModelParams};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const NOISE_FLOOR: f64 = 1e-8;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b| <= tol · max(1, |b|)`
pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

#[derive(Debug, Clone)]
pub struct Ar1Oracle {
    pub rho: f64,
    pub log_sf1: f64,
    pub log_ell1: Vec<f64>,
    pub log_sf2: f64,
    pub log_ell2: Vec<f64>,
    pub log_noise1: f64,
    pub log_noise2: f64,
}

struct Point<'a> {
    x: &'a [f64],
    level: u8,
}

fn se(log_sf: f64, log_ell: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut r2 = 0.0;
    for d in 0..a.len() {
        let t = (a[d] - b[d]) / log_ell[d].exp();
        r2 += t * t;
    }
    log_sf.exp() * (-0.5 * r2).exp()
}

fn noise(log: f64) -> (f64, bool) {
    let v = log.exp();
    if v < NOISE_FLOOR {
        (NOISE_FLOOR, true)
    } else {
        (v, false)
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl Ar1Oracle {
    pub fn from_params(p: &ModelParams<f64>) -> Self {
        Self {
            rho: p.rho,
            log_sf1: p.k1.log_signal_variance,
            log_ell1: p.k1.log_lengthscales.clone(),
            log_sf2: p.k2.log_signal_variance,
            log_ell2: p.k2.log_lengthscales.clone(),
            log_noise1: p.log_noise1,
            log_noise2: p.log_noise2,
        }
    }

    /// `[rho, log_sf1, log_ell1.., log_sf2, log_ell2.., log_noise1, log_noise2]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.rho, self.log_sf1];
        v.extend(&self.log_ell1);
        v.push(self.log_sf2);
        v.extend(&self.log_ell2);
        v.push(self.log_noise1);
        v.push(self.log_noise2);
        v
    }

    pub fn from_vec(v: &[f64], dim: usize) -> Self {
        Self {
            rho: v[0],
            log_sf1: v[1],
            log_ell1: v[2..2 + dim].to_vec(),
            log_sf2: v[2 + dim],
            log_ell2: v[3 + dim..3 + 2 * dim].to_vec(),
            log_noise1: v[3 + 2 * dim],
            log_noise2: v[4 + 2 * dim],
        }
    }

    /// Prior covariance between `f_a(x)` and `f_b(y)` (no noise).
    fn cov(&self, a: &Point, b: &Point) -> f64 {
        let k1 = se(self.log_sf1, &self.log_ell1, a.x, b.x);
        match (a.level, b.level) {
            (1, 1) => k1,
            (1, 2) | (2, 1) => self.rho * k1,
            _ => self.rho * self.rho * k1 + se(self.log_sf2, &self.log_ell2, a.x, b.x),
        }
    }

    fn points<'a>(x1: &'a [Vec<f64>], x2: &'a [Vec<f64>]) -> Vec<Point<'a>> {
        x1.iter()
            .map(|x| Point { x, level: 1 })
            .chain(x2.iter().map(|x| Point { x, level: 2 }))
            .collect()
    }

    pub fn covariance(&self, data: &Dataset<f64>) -> DMatrix<f64> {
        let (x1, x2) = (rows(&data.x1), rows(&data.x2));
        let pts = Self::points(&x1, &x2);
        let n = pts.len();
        let (s1, _) = noise(self.log_noise1);
        let (s2, _) = noise(self.log_noise2);
        DMatrix::from_fn(n, n, |i, j| {
            let mut c = self.cov(&pts[i], &pts[j]);
            if i == j {
                c += if pts[i].level == 1 { s1 } else { s2 };
            }
            c
        })
    }

    fn targets(data: &Dataset<f64>) -> DVector<f64> {
        DVector::from_iterator(data.n(), data.f1.iter().chain(data.f2.iter()).copied())
    }

    fn inverse_and_logdet(k: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let lu = k.clone().lu();
        let u = lu.u();
        let logdet = (0..k.nrows()).map(|i| u[(i, i)].abs().ln()).sum();
        (lu.try_inverse().expect("invertible covariance"), logdet)
    }

    pub fn nll(&self, data: &Dataset<f64>) -> f64 {
        let k = self.covariance(data);
        let (kinv, logdet) = Self::inverse_and_logdet(&k);
        let y = Self::targets(data);
        let quad = (y.transpose() * &kinv * &y)[(0, 0)];
        let n = y.len() as f64;
        0.5 * quad + 0.5 * logdet + 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Derivative of the training covariance for every entry of `to_vec`.
    fn covariance_derivatives(&self, data: &Dataset<f64>) -> Vec<DMatrix<f64>> {
        let (x1, x2) = (rows(&data.x1), rows(&data.x2));
        let pts = Self::points(&x1, &x2);
        let n = pts.len();
        let dim = self.log_ell1.len();
        let pair = |f: &dyn Fn(&Point, &Point) -> f64| DMatrix::from_fn(n, n, |i, j| f(&pts[i], &pts[j]));
        let k1 = |a: &Point, b: &Point| se(self.log_sf1, &self.log_ell1, a.x, b.x);
        let k2 = |a: &Point, b: &Point| se(self.log_sf2, &self.log_ell2, a.x, b.x);
        let w = |a: &Point, b: &Point| match (a.level, b.level) {
            (1, 1) => 1.0,
            (1, 2) | (2, 1) => self.rho,
            _ => self.rho * self.rho,
        };
        let both_high = |a: &Point, b: &Point| if a.level == 2 && b.level == 2 { 1.0 } else { 0.0 };

        let mut out = Vec::new();
        out.push(pair(&|a, b| {
            let dw = match (a.level, b.level) {
                (1, 1) => 0.0,
                (1, 2) | (2, 1) => 1.0,
                _ => 2.0 * self.rho,
            };
            dw * k1(a, b)
        }));
        out.push(pair(&|a, b| w(a, b) * k1(a, b)));
        for d in 0..dim {
            let ell = self.log_ell1[d].exp();
            out.push(pair(&|a, b| {
                let t = (a.x[d] - b.x[d]) / ell;
                w(a, b) * k1(a, b) * t * t
            }));
        }
        out.push(pair(&|a, b| both_high(a, b) * k2(a, b)));
        for d in 0..dim {
            let ell = self.log_ell2[d].exp();
            out.push(pair(&|a, b| {
                let t = (a.x[d] - b.x[d]) / ell;
                both_high(a, b) * k2(a, b) * t * t
            }));
        }
        for (level, log) in [(1u8, self.log_noise1), (2u8, self.log_noise2)] {
            let (v, floored) = noise(log);
            let scale = if floored { 0.0 } else { v };
            out.push(DMatrix::from_fn(n, n, |i, j| {
                if i == j && pts[i].level == level {
                    scale
                } else {
                    0.0
                }
            }));
        }
        out
    }

    /// `∂nll/∂θ_p = ½ tr(K⁻¹ ∂K) - ½ αᵀ ∂K α`
    pub fn nll_gradient(&self, data: &Dataset<f64>) -> Vec<f64> {
        let k = self.covariance(data);
        let (kinv, _) = Self::inverse_and_logdet(&k);
        let alpha = &kinv * Self::targets(data);
        self.covariance_derivatives(data)
            .iter()
            .map(|dk| 0.5 * (&kinv * dk).trace() - 0.5 * (alpha.transpose() * dk * &alpha)[(0, 0)])
            .collect()
    }

    /// Posterior mean and variance of the noise-free high-fidelity output.
    pub fn predict(&self, data: &Dataset<f64>, xstar: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
        let (x1, x2) = (rows(&data.x1), rows(&data.x2));
        let pts = Self::points(&x1, &x2);
        let k = self.covariance(data);
        let (kinv, _) = Self::inverse_and_logdet(&k);
        let y = Self::targets(data);
        let alpha = &kinv * &y;
        let mut mean = Vec::new();
        let mut var = Vec::new();
        for q in rows(xstar) {
            let star = Point { x: &q, level: 2 };
            let ks = DVector::from_iterator(pts.len(), pts.iter().map(|p| self.cov(&star, p)));
            mean.push(ks.dot(&alpha));
            let prior = self.cov(&star, &star);
            var.push((prior - (ks.transpose() * &kinv * &ks)[(0, 0)]).max(0.0));
        }
        (mean, var)
    }
}

/// Targets standardized with the combined mean and population standard deviation.
pub fn standardize(data: &Dataset<f64>) -> Dataset<f64> {
    let all: Vec<f64> = data.f1.iter().chain(data.f2.iter()).copied().collect();
    let n = all.len() as f64;
    let mean = all.iter().sum::<f64>() / n;
    let var = all.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
    Dataset {
        x1: data.x1.clone(),
        f1: data.f1.map(|v| (v - mean) / sd),
        x2: data.x2.clone(),
        f2: data.f2.map(|v| (v - mean) / sd),
    }
}

/// Identity-map model with random, well-conditioned hyperparameters and
/// uniformly drawn inputs and targets.
pub fn random_ar1_instance(r: &mut ChaCha8Rng, dim: usize) -> (ModelParams<f64>, Dataset<f64>) {
    let n1 = r.random_range(4..12);
    let n2 = r.random_range(2..6);
    let ells = |r: &mut ChaCha8Rng| (0..dim).map(|_| r.random_range(-1.5..0.5)).collect::<Vec<_>>();
    let params = ModelParams {
        rho: r.random_range(-2.0..2.0),
        k1: KernelParams {
            log_signal_variance: r.random_range(-1.0..1.0),
            log_lengthscales: ells(r),
        },
        k2: KernelParams {
            log_signal_variance: r.random_range(-2.0..0.5),
            log_lengthscales: ells(r),
        },
        fmap: dmfgp::feature_map::identity_map(dim),
        log_noise1: r.random_range(-7.0..-2.0),
        log_noise2: r.random_range(-7.0..-2.0),
    };
    let data = Dataset::new(
        DMatrix::from_fn(n1, dim, |_, _| r.random_range(0.0..1.0)),
        DVector::from_fn(n1, |_, _| r.random_range(-1.0..1.0)),
        DMatrix::from_fn(n2, dim, |_, _| r.random_range(0.0..1.0)),
        DVector::from_fn(n2, |_, _| r.random_range(-1.0..1.0)),
    )
    .unwrap();
    (params, data)
}

/// `[3-2]` network model on 1-D inputs with targets drawn from the model's
/// own prior (plus a little noise on the low-fidelity outputs).
pub fn random_network_instance(r: &mut ChaCha8Rng, n1: usize, n2: usize) -> (ModelParams<f64>, Dataset<f64>) {
    let arch = Architecture::default_sigmoid(1);
    let theta: Vec<f64> = (0..arch.n_params()).map(|_| r.random_range(-2.0..2.0)).collect();
    let fmap = FeatureMap {
        params: FeatureMapParams::from_slice(&arch, &theta).unwrap(),
        arch,
        frozen: false,
    };
    let params = ModelParams {
        rho: r.random_range(-1.5..1.5),
        k1: KernelParams {
            log_signal_variance: r.random_range(-0.5..0.5),
            log_lengthscales: (0..2).map(|_| r.random_range(-0.5..0.5)).collect(),
        },
        k2: KernelParams {
            log_signal_variance: r.random_range(-1.5..0.0),
            log_lengthscales: (0..2).map(|_| r.random_range(-0.5..0.5)).collect(),
        },
        fmap,
        log_noise1: r.random_range(-5.0..-2.0),
        log_noise2: r.random_range(-5.0..-2.0),
    };
    let x1 = DMatrix::from_fn(n1, 1, |_, _| r.random_range(0.0..1.0));
    let x2 = DMatrix::from_fn(n2, 1, |_, _| r.random_range(0.0..1.0));
    let stacked = DMatrix::from_iterator(n1 + n2, 1, x1.iter().chain(x2.iter()).copied());
    let (f1, f2) = sample_prior(&params, &stacked, r.random(), 1e-8).unwrap();
    let f1 = f1.rows(0, n1).map(|v| v + 0.05 * r.random_range(-1.0..1.0));
    let f2 = f2.rows(n1, n2).into_owned();
    (params, Dataset::new(x1, f1, x2, f2).unwrap())
}

/// Central finite differences of `f` over every coordinate of `x`.
pub fn central_differences(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut up = x.to_vec();
            let mut down = x.to_vec();
            up[i] += step;
            down[i] -= step;
            (f(&up) - f(&down)) / (2.0 * step)
        })
        .collect()
}

/// Entrywise comparison with relative tolerance and an absolute floor.
pub fn gradient_matches(analytic: &[f64], numeric: &[f64], rtol: f64, atol: f64) -> bool {
    analytic.iter().zip(numeric).all(|(a, n)| {
        let abs = (a - n).abs();
        abs <= atol || abs / n.abs() < rtol
    })
}

/// Empirical covariance of `draws` (rows are samples).
fn empirical_covariance(draws: &[Vec<f64>]) -> DMatrix<f64> {
    let n = draws.len() as f64;
    let d = draws[0].len();
    let mean: Vec<f64> = (0..d).map(|j| draws.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    DMatrix::from_fn(d, d, |i, j| {
        draws.iter().map(|r| (r[i] - mean[i]) * (r[j] - mean[j])).sum::<f64>() / (n - 1.0)
    })
}

fn se_kernel(sf2: f64, ell: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a.iter().zip(b).zip(ell).map(|((x, y), l)| ((x - y) / l).powi(2)).sum();
    sf2 * (-0.5 * r2).exp()
}

/// Cov of `[f1(h_1..h_m), f2(h_1..h_m)]` written out entry by entry.
fn reference_covariance(rho: f64, k1: (f64, &[f64]), k2: (f64, &[f64]), h: &[Vec<f64>]) -> DMatrix<f64> {
    let m = h.len();
    DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        let (a, b) = (&h[i % m], &h[j % m]);
        let c1 = se_kernel(k1.0, k1.1, a, b);
        match (i < m, j < m) {
            (true, true) => c1,
            (false, false) => rho * rho * c1 + se_kernel(k2.0, k2.1, a, b),
            _ => rho * c1,
        }
    })
}

/// Draws `draws` seeded prior samples of `(f1, f2)` at three fixed inputs
/// and counts covariance entries more than three standard errors from the
/// closed form. Returns `(outside, total)`.
pub fn monte_carlo_covariance_check(draws: usize) -> (usize, usize) {
    let arch = Architecture::default_sigmoid(1);
    let theta = [0.8, -1.1, 2.0, 0.3, -0.2, 0.1, 1.2, -0.7, 0.4, -0.9, 1.5, 0.6, 0.2, -0.1];
    let params = ModelParams {
        rho: 0.7,
        k1: KernelParams::new(1.3, &[0.6, 1.1]),
        k2: KernelParams::new(0.4, &[0.9, 0.5]),
        fmap: FeatureMap {
            params: FeatureMapParams::from_slice(&arch, &theta).unwrap(),
            arch,
            frozen: false,
        },
        log_noise1: -10.0,
        log_noise2: -10.0,
    };
    let x = DMatrix::from_column_slice(3, 1, &[0.1, 0.45, 0.8]);
    let h = params.fmap.forward(&x).unwrap();
    let h_rows: Vec<Vec<f64>> = (0..3).map(|i| h.row(i).iter().copied().collect()).collect();
    let expected = reference_covariance(0.7, (1.3, &[0.6, 1.1]), (0.4, &[0.9, 0.5]), &h_rows);

    let samples: Vec<Vec<f64>> = (0..draws as u64)
        .map(|seed| {
            let (f1, f2) = sample_prior(&params, &x, seed, 1e-10).unwrap();
            f1.iter().chain(f2.iter()).copied().collect()
        })
        .collect();
    let got = empirical_covariance(&samples);

    // Gaussian sampling error of a covariance entry: √((Σii Σjj + Σij²) / n).
    let n = draws as f64;
    let mut bad = 0;
    for i in 0..6 {
        for j in 0..6 {
            let se = ((expected[(i, i)] * expected[(j, j)] + expected[(i, j)].powi(2)) / n).sqrt();
            if (got[(i, j)] - expected[(i, j)]).abs() > 3.0 * se {
                bad += 1;
            }
        }
    }
    (bad, 36)
}

pub fn dmfgp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dmfgp"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

/// Runs the binary and returns stdout, panicking on a non-zero exit.
pub fn ok(args: &[&str], cwd: &Path) -> String {
    let out = dmfgp(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Runs generate → train (network and baseline) → predict → evaluate in
/// `dir` and returns every produced file with the captured stdout.
pub fn run_pipeline(kind: &str, seed: &str, restarts: &str, dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut log = String::new();
    let steps: Vec<Vec<&str>> = vec![
        vec!["generate", "--kind", kind, "--seed", seed, "--out", "d.csv"],
        vec!["train", "--data", "d.csv", "--restarts", restarts, "--seed", seed, "--out", "deep.json"],
        vec!["train", "--data", "d.csv", "--restarts", restarts, "--seed", seed, "--baseline", "ar1", "--out", "ar1.json"],
        vec!["predict", "--model", "deep.json", "--grid", "50", "--out", "grid.csv"],
        vec!["predict", "--model", "ar1.json", "--queries", "q.csv", "--out", "q_pred.csv"],
        vec!["evaluate", "--model", "deep.json", "--test", "d.test.csv", "--out", "deep.eval.json"],
        vec!["evaluate", "--model", "ar1.json", "--test", "d.test.csv", "--out", "ar1.eval.json"],
    ];
    fs::write(dir.join("q.csv"), "x0\n0.05\n0.5\n0.95\n").unwrap();
    for args in &steps {
        log.push_str(&ok(args, dir));
    }
    let mut files: Vec<(PathBuf, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (PathBuf::from(p.file_name().unwrap()), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files.push((PathBuf::from("<stdout>"), log.into_bytes()));
    files
}
