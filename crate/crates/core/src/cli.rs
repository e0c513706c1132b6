//! Command-line front end: `generate`, `train`, `predict`, `evaluate`.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O or parse failure, 3 numerical
//! failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgGroup, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde_json::json;

use crate::benchmarks::{generate, metrics, uniform_grid, BenchmarkKind, BenchmarkSpec};
use crate::error::Error;
use crate::feature_map::{Architecture, HiddenWidths};
use crate::io::{self, ModelFile, TestSet};
use crate::trainer::{train, MapSpec, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "dmfgp", version, about = "Deep multi-fidelity Gaussian process surrogates")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    /// Identity feature map (autoregressive co-kriging).
    Ar1,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a benchmark dataset, its test grid (`<stem>.test.csv`) and a
    /// metadata file (`<stem>.meta.json`).
    Generate {
        #[arg(long)]
        kind: BenchmarkKind,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a model by maximum marginal likelihood and write it as JSON.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Layer widths of the feature network, or `identity`.
        #[arg(long, default_value = "3-2")]
        arch: String,
        #[arg(long, default_value_t = 10)]
        restarts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        max_iterations: usize,
        /// Train a baseline model instead of the network.
        #[arg(long)]
        baseline: Option<Baseline>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Posterior mean, standard deviation and learned features at query points.
    #[command(group(ArgGroup::new("source").required(true).args(["queries", "grid"])))]
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        queries: Option<PathBuf>,
        /// Uniform grid of this many points spanning the training inputs (1-D only).
        #[arg(long)]
        grid: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model against held-out high-fidelity points.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotPositiveDefinite { .. } | Error::TrainingFailed(_) => EXIT_NUMERICAL,
        Error::InvalidArgument(_) | Error::Io { .. } | Error::Parse { .. } | Error::Json { .. } => EXIT_IO,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit code. Normal output goes to `out`, diagnostics to `err`.
pub fn run<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    EXIT_OK
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Run(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), Failure> {
    let text = match command {
        Command::Generate { kind, seed, out: path } => cmd_generate(kind, seed, &path)?,
        Command::Train {
            data,
            arch,
            restarts,
            seed,
            max_iterations,
            baseline,
            out: path,
        } => {
            let config = TrainConfig {
                restarts,
                seed,
                max_iterations,
                ..TrainConfig::default()
            };
            cmd_train(&data, &arch, baseline, &config, &path, err)?
        }
        Command::Predict {
            model,
            queries,
            grid,
            out: path,
        } => cmd_predict(&model, queries.as_deref(), grid, &path)?,
        Command::Evaluate { model, test, out: path } => cmd_evaluate(&model, &test, &path)?,
    };
    let _ = out.write_all(text.as_bytes());
    Ok(())
}

fn meta_path_for(data_path: &Path) -> PathBuf {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data_path.with_file_name(format!("{stem}.meta.json"))
}

fn cmd_generate(kind: BenchmarkKind, seed: u64, path: &Path) -> Result<String, Failure> {
    let spec = BenchmarkSpec::new(kind, seed);
    let bench = generate(&spec)?;
    io::write_dataset(path, &bench.dataset)?;

    let test = TestSet {
        x: bench.test.inputs(),
        y: DVector::from_vec(bench.test.truth.clone()),
    };
    let test_path = io::test_path_for(path);
    io::write_test_set(&test_path, &test)?;

    let (lo, hi) = kind.interval();
    let mut meta = json!({
        "kind": kind.name(),
        "seed": seed,
        "n1": spec.n1,
        "n2": spec.n2,
        "interval": [lo, hi],
        "test_points": test.y.len(),
    });
    match kind {
        BenchmarkKind::Step => meta["noise_sd"] = json!(spec.noise_sd),
        BenchmarkKind::PriorSample => {
            meta["rho_true"] = json!(spec.rho_true);
            meta["generating_kernels"] = json!({"k1": "unit SE-ARD", "k2": "unit SE-ARD"});
        }
        BenchmarkKind::ForresterJump => {}
    }
    let meta_path = meta_path_for(path);
    let mut meta_text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    meta_text.push('\n');
    io::write_text(&meta_path, &meta_text)?;

    Ok(format!(
        "wrote {}: {} rows ({} low-fidelity, {} high-fidelity)\nwrote {}: {} rows\nwrote {}\n",
        path.display(),
        bench.dataset.n(),
        bench.dataset.n1(),
        bench.dataset.n2(),
        test_path.display(),
        test.y.len(),
        meta_path.display()
    ))
}

fn map_spec(arch: &str, baseline: Option<Baseline>, dim: usize) -> Result<MapSpec, Failure> {
    if baseline == Some(Baseline::Ar1) || arch.trim() == "identity" {
        return Ok(MapSpec::Identity);
    }
    let widths: HiddenWidths = arch.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    let arch = Architecture::mlp(dim, &widths.0).map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(MapSpec::Network(arch))
}

fn cmd_train(
    data_path: &Path,
    arch: &str,
    baseline: Option<Baseline>,
    config: &TrainConfig,
    path: &Path,
    err: &mut dyn Write,
) -> Result<String, Failure> {
    let data = io::read_dataset(data_path)?;
    let map = map_spec(arch, baseline, data.dim())?;
    if let Some(w) = data.fidelity_warning() {
        let _ = writeln!(err, "warning: {w}");
    }
    let report = train(&data, &map, config)?;
    let label = baseline.map(|_| "ar1".to_string());
    let model = ModelFile::from_report(&report, &data, label);
    io::write_model(path, &model)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "model {} on {} low-fidelity and {} high-fidelity points, {} restarts, seed {}",
        model.arch,
        data.n1(),
        data.n2(),
        config.restarts,
        config.seed
    );
    let _ = writeln!(s, "restart  initial_nll      final_nll        iterations  converged");
    for r in &report.per_restart {
        let fin = r.final_nll.map_or("failed".to_string(), |v| format!("{v:.6}"));
        let _ = writeln!(
            s,
            "{:>7}  {:<15.6}  {:<15}  {:>10}  {}",
            r.restart,
            r.initial_nll,
            fin,
            r.iterations,
            if r.converged { "yes" } else { "no" }
        );
        if let Some(e) = &r.error {
            let _ = writeln!(s, "         error: {e}");
        }
    }
    let p = &report.best_params;
    let _ = writeln!(s, "best restart {}: nll {:.6}", report.best_restart, report.best_nll);
    let _ = writeln!(
        s,
        "rho {:.6}  noise1 {:.6e}  noise2 {:.6e}",
        p.rho,
        p.noise1(),
        p.noise2()
    );
    let _ = writeln!(s, "wrote {}", path.display());
    Ok(s)
}

fn grid_over_data(model: &ModelFile, n: usize) -> Result<DMatrix<f64>, Failure> {
    let data = model.dataset()?;
    if data.dim() != 1 {
        return Err(Failure::Usage(format!(
            "--grid needs 1-D inputs, the model has {}",
            data.dim()
        )));
    }
    let xs: Vec<f64> = data.x1.iter().chain(data.x2.iter()).copied().collect();
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let g = uniform_grid(lo, hi, n);
    Ok(DMatrix::from_column_slice(g.len(), 1, &g))
}

fn cmd_predict(model_path: &Path, queries: Option<&Path>, grid: Option<usize>, path: &Path) -> Result<String, Failure> {
    let model = io::read_model(model_path)?;
    let x = match (queries, grid) {
        (Some(q), _) => io::read_queries(q)?,
        (None, Some(n)) => grid_over_data(&model, n)?,
        (None, None) => return Err(Failure::Usage("one of --queries or --grid is required".into())),
    };
    let surrogate = model.surrogate()?;
    let pred = surrogate.predict(&x)?;
    let h = surrogate.features(&x)?;
    io::write_text(path, &io::format_predictions(&x, &pred, &h))?;
    Ok(format!("wrote {}: {} predictions\n", path.display(), x.nrows()))
}

fn cmd_evaluate(model_path: &Path, test_path: &Path, path: &Path) -> Result<String, Failure> {
    let model = io::read_model(model_path)?;
    let test = io::read_test_set(test_path)?;
    let surrogate = model.surrogate()?;
    let pred = surrogate.predict(&test.x)?;
    let truth: Vec<f64> = test.y.iter().copied().collect();
    let m = metrics(&pred, &truth)?;
    let doc = json!({
        "rmse": m.rmse,
        "coverage": m.coverage,
        "mnlpd": m.mnlpd,
        "n": truth.len(),
    });
    let mut text = serde_json::to_string_pretty(&doc).expect("metrics serialize");
    text.push('\n');
    io::write_text(path, &text)?;
    Ok(format!(
        "rmse {:.6}  coverage {:.4}  mnlpd {:.6}\nwrote {}\n",
        m.rmse,
        m.coverage,
        m.mnlpd,
        path.display()
    ))
}
