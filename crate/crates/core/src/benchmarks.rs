//! Seeded generators for the three discontinuous benchmarks (step function,
//! Forrester function with a jump, joint prior sample through a piecewise
//! feature map) and posterior evaluation metrics.
//!
//! Every benchmark draws 200 candidate inputs (50 + 100 + 50 uniform points
//! on three subintervals, the middle one around the discontinuity), takes
//! `n1` of them for low fidelity and a disjoint `n2` for high fidelity, and
//! evaluates the noise-free high-fidelity truth on a 200-point uniform grid.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::kernel::KernelParams;
use crate::mfgp::{sample_prior_features, PosteriorPrediction, DEFAULT_JITTER};

pub const N_CANDIDATES: usize = 200;
pub const GRID_SIZE: usize = 200;
/// Candidates per subinterval (left, middle, right).
const SPLIT: [usize; 3] = [50, 100, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BenchmarkKind {
    Step,
    ForresterJump,
    PriorSample,
}

impl BenchmarkKind {
    /// Subinterval boundaries `[lo, a, b, hi]`.
    pub fn partition(self) -> [f64; 4] {
        match self {
            BenchmarkKind::Step => [0.0, 0.8, 1.2, 2.0],
            BenchmarkKind::ForresterJump | BenchmarkKind::PriorSample => [0.0, 0.4, 0.6, 1.0],
        }
    }

    pub fn interval(self) -> (f64, f64) {
        let p = self.partition();
        (p[0], p[3])
    }

    pub fn name(self) -> &'static str {
        match self {
            BenchmarkKind::Step => "step",
            BenchmarkKind::ForresterJump => "forrester",
            BenchmarkKind::PriorSample => "sample",
        }
    }
}

impl fmt::Display for BenchmarkKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" => Ok(BenchmarkKind::Step),
            "forrester" | "forrester_jump" => Ok(BenchmarkKind::ForresterJump),
            "sample" | "prior_sample" => Ok(BenchmarkKind::PriorSample),
            other => Err(Error::invalid(format!("unknown benchmark kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fidelity {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchmarkSpec {
    pub kind: BenchmarkKind,
    pub seed: u64,
    pub n1: usize,
    pub n2: usize,
    /// Observation noise sd (step only).
    pub noise_sd: f64,
    /// Coupling of the generating prior (prior sample only).
    pub rho_true: f64,
}

impl BenchmarkSpec {
    pub fn new(kind: BenchmarkKind, seed: u64) -> Self {
        let (n1, n2) = match kind {
            BenchmarkKind::Step => (45, 5),
            BenchmarkKind::ForresterJump => (50, 5),
            BenchmarkKind::PriorSample => (50, 15),
        };
        Self {
            kind,
            seed,
            n1,
            n2,
            noise_sd: 0.01,
            rho_true: 1.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n1 + self.n2 > N_CANDIDATES {
            return Err(Error::invalid(format!(
                "n1 + n2 = {} exceeds the {N_CANDIDATES} candidate points",
                self.n1 + self.n2
            )));
        }
        if self.n1 == 0 && self.n2 == 0 {
            return Err(Error::invalid("n1 and n2 are both zero"));
        }
        if !(self.noise_sd >= 0.0) || !self.rho_true.is_finite() {
            return Err(Error::invalid("noise_sd must be non-negative and rho_true finite"));
        }
        Ok(())
    }
}

/// The 200 candidate inputs for `kind`, deterministic in `seed`.
pub fn candidate_points(kind: BenchmarkKind, seed: u64) -> Vec<f64> {
    let p = kind.partition();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(N_CANDIDATES);
    for (k, &count) in SPLIT.iter().enumerate() {
        let (lo, hi) = (p[k], p[k + 1]);
        out.extend((0..count).map(|_| rng.random_range(lo..=hi)));
    }
    out
}

fn check_range(x: f64, lo: f64, hi: f64) -> Result<()> {
    if (lo..=hi).contains(&x) {
        Ok(())
    } else {
        Err(Error::invalid(format!("x = {x} outside [{lo}, {hi}]")))
    }
}

/// Step function on `[0, 2]`, jumping after `x = 1`.
pub fn step_truth(x: f64, fidelity: Fidelity) -> Result<f64> {
    check_range(x, 0.0, 2.0)?;
    let upper = x > 1.0;
    Ok(match (fidelity, upper) {
        (Fidelity::High, false) => -1.0,
        (Fidelity::High, true) => 2.0,
        (Fidelity::Low, false) => 0.0,
        (Fidelity::Low, true) => 1.0,
    })
}

/// Forrester function with a jump after `x = 0.5` on `[0, 1]`.
pub fn forrester_truth(x: f64, fidelity: Fidelity) -> Result<f64> {
    check_range(x, 0.0, 1.0)?;
    let upper = x > 0.5;
    let t = 6.0 * x - 2.0;
    let low = 0.5 * t * t * (12.0 * x - 4.0).sin() + 10.0 * (x - 0.5) - 5.0 + if upper { 3.0 } else { 0.0 };
    Ok(match fidelity {
        Fidelity::Low => low,
        Fidelity::High => 2.0 * low - 20.0 * x + 20.0 + if upper { 4.0 } else { 0.0 },
    })
}

/// Piecewise map `R → R²` used to generate the prior-sample benchmark:
/// `(x, x)` up to 0.5, `(x, 2x)` beyond.
pub fn true_h_sample(x: f64) -> Result<[f64; 2]> {
    check_range(x, 0.0, 1.0)?;
    Ok(if x <= 0.5 { [x, x] } else { [x, 2.0 * x] })
}

/// Uniform evaluation grid with noise-free high-fidelity truth.
#[derive(Debug, Clone, PartialEq)]
pub struct TestGrid {
    pub x: Vec<f64>,
    pub truth: Vec<f64>,
}

impl TestGrid {
    pub fn inputs(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.x.len(), 1, &self.x)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub spec: BenchmarkSpec,
    pub dataset: Dataset,
    pub test: TestGrid,
}

pub fn uniform_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

type Dataset = crate::mfgp::Dataset<f64>;

fn column(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_column_slice(values.len(), 1, values)
}

/// Builds the training data and the test grid for `spec`.
pub fn generate(spec: &BenchmarkSpec) -> Result<Benchmark> {
    spec.validate()?;
    let kind = spec.kind;
    let candidates = candidate_points(kind, spec.seed);
    let (lo, hi) = kind.interval();
    let grid = uniform_grid(lo, hi, GRID_SIZE);

    // Candidates use stream 0 of the seed; selection, noise and prior draws use stream 1.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..N_CANDIDATES).collect();
    order.shuffle(&mut rng);
    let idx1 = &order[..spec.n1];
    let idx2 = &order[spec.n1..spec.n1 + spec.n2];
    let x1: Vec<f64> = idx1.iter().map(|&i| candidates[i]).collect();
    let x2: Vec<f64> = idx2.iter().map(|&i| candidates[i]).collect();

    let (f1, f2, truth) = match kind {
        BenchmarkKind::Step | BenchmarkKind::ForresterJump => {
            let truth_fn = if kind == BenchmarkKind::Step { step_truth } else { forrester_truth };
            let noise_sd = if kind == BenchmarkKind::Step { spec.noise_sd } else { 0.0 };
            let noise = |rng: &mut ChaCha8Rng| -> f64 {
                if noise_sd > 0.0 {
                    Normal::new(0.0, noise_sd).expect("positive sd").sample(rng)
                } else {
                    0.0
                }
            };
            let mut f1 = Vec::with_capacity(x1.len());
            for &x in &x1 {
                f1.push(truth_fn(x, Fidelity::Low)? + noise(&mut rng));
            }
            let mut f2 = Vec::with_capacity(x2.len());
            for &x in &x2 {
                f2.push(truth_fn(x, Fidelity::High)? + noise(&mut rng));
            }
            let truth = grid
                .iter()
                .map(|&x| truth_fn(x, Fidelity::High))
                .collect::<Result<Vec<_>>>()?;
            (f1, f2, truth)
        }
        BenchmarkKind::PriorSample => {
            // One joint draw over candidates and grid together, so the grid
            // truth is the same sample function as the training data.
            let all: Vec<f64> = candidates.iter().chain(&grid).copied().collect();
            let mut h = DMatrix::zeros(all.len(), 2);
            for (i, &x) in all.iter().enumerate() {
                let f = true_h_sample(x)?;
                h[(i, 0)] = f[0];
                h[(i, 1)] = f[1];
            }
            let unit = KernelParams::<f64>::unit(2);
            let (s1, s2) = sample_prior_features(spec.rho_true, &unit, &unit, &h, rng.next_u64(), DEFAULT_JITTER)?;
            let f1 = idx1.iter().map(|&i| s1[i]).collect();
            let f2 = idx2.iter().map(|&i| s2[i]).collect();
            let truth = (0..GRID_SIZE).map(|g| s2[N_CANDIDATES + g]).collect();
            (f1, f2, truth)
        }
    };

    let dataset = Dataset::new(column(&x1), DVector::from_vec(f1), column(&x2), DVector::from_vec(f2))?;
    Ok(Benchmark {
        spec: *spec,
        dataset,
        test: TestGrid { x: grid, truth },
    })
}

/// Summary of a posterior against known truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    /// Fraction of truth values inside `mean ± 2 sd`.
    pub coverage: f64,
    /// Mean negative log predictive density.
    pub mnlpd: f64,
}

/// Variances below this are raised to it inside the log density.
pub const MIN_VARIANCE: f64 = 1e-12;

pub fn metrics(pred: &PosteriorPrediction<f64>, truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(format!(
            "{} predictions for {} truth values",
            pred.len(),
            truth.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::invalid("no points to evaluate"));
    }
    let n = truth.len() as f64;
    let mut sq = 0.0;
    let mut inside = 0usize;
    let mut nlpd = 0.0;
    for ((m, v), y) in pred.mean.iter().zip(pred.variance.iter()).zip(truth) {
        let err = y - m;
        sq += err * err;
        if err.abs() <= 2.0 * v.max(0.0).sqrt() {
            inside += 1;
        }
        let var = v.max(MIN_VARIANCE);
        nlpd += 0.5 * (2.0 * std::f64::consts::PI * var).ln() + err * err / (2.0 * var);
    }
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        coverage: inside as f64 / n,
        mnlpd: nlpd / n,
    })
}
