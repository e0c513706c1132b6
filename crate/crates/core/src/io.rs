//! File formats used by the command-line tool.
//!
//! * Dataset CSV: header `fidelity,x0,...,x{D-1},y`, one observation per
//!   row, fidelity 1 (low) or 2 (high). Test files use the same layout with
//!   only fidelity-2 rows.
//! * Query CSV: header `x0,...,x{D-1}`.
//! * Prediction CSV: `x0,...,mean,std,h0,...`.
//! * Model JSON: see [`ModelFile`].
//!
//! Numbers are written with 17 significant digits so every `f64` round-trips
//! exactly. Lines end in `\n`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature_map::{Architecture, FeatureMap, FeatureMapParams};
use crate::kernel::KernelParams;
use crate::mfgp::{Dataset, ModelParams, PosteriorPrediction, Standardization, Surrogate};
use crate::trainer::TrainReport;

/// Formats a value with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `contents`, creating parent directories as needed.
pub fn write_text(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| io_err(path, e))
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn x_header(dim: usize) -> String {
    (0..dim).map(|d| format!("x{d}")).collect::<Vec<_>>().join(",")
}

/// Parses a header of the form `prefix x0,...,x{D-1} suffix` and returns D.
fn header_dim(path: &Path, line: usize, header: &str, prefix: &[&str], suffix: &[&str]) -> Result<usize> {
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let n_fixed = prefix.len() + suffix.len();
    let expected = |d: usize| {
        let mut v: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
        v.extend((0..d).map(|i| format!("x{i}")));
        v.extend(suffix.iter().map(|s| s.to_string()));
        v.join(",")
    };
    if cols.len() <= n_fixed {
        return Err(parse_err(path, line, format!("header {header:?} has no input columns")));
    }
    let dim = cols.len() - n_fixed;
    if cols.join(",") != expected(dim) {
        return Err(parse_err(
            path,
            line,
            format!("expected header {:?}, found {header:?}", expected(dim)),
        ));
    }
    Ok(dim)
}

fn parse_row(path: &Path, line: usize, text: &str, width: usize) -> Result<Vec<f64>> {
    let fields: Vec<&str> = text.split(',').collect();
    if fields.len() != width {
        return Err(parse_err(
            path,
            line,
            format!("expected {width} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let v: f64 = f
                .trim()
                .parse()
                .map_err(|_| parse_err(path, line, format!("field {} is not a number: {f:?}", i + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(parse_err(path, line, format!("field {} is not finite", i + 1)))
            }
        })
        .collect()
}

fn rows_to_matrix(rows: &[Vec<f64>], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), dim, |i, j| rows[i][j])
}

/// Labelled observations read from a dataset-format file.
struct Observations {
    dim: usize,
    low: Vec<Vec<f64>>,
    high: Vec<Vec<f64>>,
    /// Line number of the first low-fidelity row.
    first_low_line: Option<usize>,
}

fn parse_observations(path: &Path, text: &str) -> Result<Observations> {
    let mut it = lines(text);
    let (hline, header) = it.next().ok_or_else(|| parse_err(path, 1, "file is empty"))?;
    let dim = header_dim(path, hline, header, &["fidelity"], &["y"])?;
    let mut obs = Observations {
        dim,
        low: Vec::new(),
        high: Vec::new(),
        first_low_line: None,
    };
    for (line, text) in it {
        let row = parse_row(path, line, text, dim + 2)?;
        let values = row[1..].to_vec();
        match row[0] {
            f if f == 1.0 => {
                obs.first_low_line.get_or_insert(line);
                obs.low.push(values);
            }
            f if f == 2.0 => obs.high.push(values),
            f => return Err(parse_err(path, line, format!("fidelity must be 1 or 2, found {f}"))),
        }
    }
    Ok(obs)
}

fn split_xy(rows: &[Vec<f64>], dim: usize) -> (DMatrix<f64>, DVector<f64>) {
    let x = rows_to_matrix(rows, dim);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r[dim]));
    (x, y)
}

/// Dataset CSV text: low-fidelity rows first, then high-fidelity rows.
pub fn format_dataset(data: &Dataset<f64>) -> String {
    let mut out = format!("fidelity,{},y\n", x_header(data.dim()));
    let blocks = [(1, &data.x1, &data.f1), (2, &data.x2, &data.f2)];
    for (fid, x, f) in blocks {
        for i in 0..x.nrows() {
            out.push_str(&fid.to_string());
            for v in x.row(i).iter() {
                let _ = write!(out, ",{}", fmt_f64(*v));
            }
            let _ = writeln!(out, ",{}", fmt_f64(f[i]));
        }
    }
    out
}

pub fn parse_dataset(path: &Path, text: &str) -> Result<Dataset<f64>> {
    let obs = parse_observations(path, text)?;
    let (x1, f1) = split_xy(&obs.low, obs.dim);
    let (x2, f2) = split_xy(&obs.high, obs.dim);
    Dataset::new(x1, f1, x2, f2).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn write_dataset(path: &Path, data: &Dataset<f64>) -> Result<()> {
    write_text(path, &format_dataset(data))
}

pub fn read_dataset(path: &Path) -> Result<Dataset<f64>> {
    parse_dataset(path, &read_text(path)?)
}

/// High-fidelity reference points in dataset format.
#[derive(Debug, Clone, PartialEq)]
pub struct TestSet {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

pub fn format_test_set(test: &TestSet) -> String {
    let empty = Dataset {
        x1: DMatrix::zeros(0, test.x.ncols()),
        f1: DVector::zeros(0),
        x2: test.x.clone(),
        f2: test.y.clone(),
    };
    format_dataset(&empty)
}

pub fn parse_test_set(path: &Path, text: &str) -> Result<TestSet> {
    let obs = parse_observations(path, text)?;
    if let Some(line) = obs.first_low_line {
        return Err(parse_err(path, line, "test files hold only fidelity-2 rows"));
    }
    if obs.high.is_empty() {
        return Err(parse_err(path, 1, "test file has no rows"));
    }
    let (x, y) = split_xy(&obs.high, obs.dim);
    Ok(TestSet { x, y })
}

pub fn write_test_set(path: &Path, test: &TestSet) -> Result<()> {
    write_text(path, &format_test_set(test))
}

pub fn read_test_set(path: &Path) -> Result<TestSet> {
    parse_test_set(path, &read_text(path)?)
}

pub fn parse_queries(path: &Path, text: &str) -> Result<DMatrix<f64>> {
    let mut it = lines(text);
    let (hline, header) = it.next().ok_or_else(|| parse_err(path, 1, "file is empty"))?;
    let dim = header_dim(path, hline, header, &[], &[])?;
    let rows = it
        .map(|(line, text)| parse_row(path, line, text, dim))
        .collect::<Result<Vec<_>>>()?;
    Ok(rows_to_matrix(&rows, dim))
}

pub fn read_queries(path: &Path) -> Result<DMatrix<f64>> {
    parse_queries(path, &read_text(path)?)
}

pub fn format_queries(x: &DMatrix<f64>) -> String {
    let mut out = x_header(x.ncols());
    out.push('\n');
    for i in 0..x.nrows() {
        let row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// Prediction CSV: inputs, posterior mean and standard deviation, features.
pub fn format_predictions(x: &DMatrix<f64>, pred: &PosteriorPrediction<f64>, h: &DMatrix<f64>) -> String {
    let h_header: Vec<String> = (0..h.ncols()).map(|d| format!("h{d}")).collect();
    let mut out = format!("{},mean,std,{}\n", x_header(x.ncols()), h_header.join(","));
    let std = pred.std();
    for i in 0..x.nrows() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| fmt_f64(*v)).collect();
        row.push(fmt_f64(pred.mean[i]));
        row.push(fmt_f64(std[i]));
        row.extend(h.row(i).iter().map(|v| fmt_f64(*v)));
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// One network layer in the model file. Weights are row-major,
/// `output_width × input_width`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartRecord {
    pub restart: usize,
    pub final_nll: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub seed: u64,
    pub restarts: usize,
    pub best_nll: f64,
    pub best_restart: usize,
    pub baseline: Option<String>,
    pub per_restart: Vec<RestartRecord>,
}

/// Training data stored row by row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataRecord {
    pub x1: Vec<Vec<f64>>,
    pub f1: Vec<f64>,
    pub x2: Vec<Vec<f64>>,
    pub f2: Vec<f64>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

impl DataRecord {
    pub fn from_dataset(d: &Dataset<f64>) -> Self {
        Self {
            x1: matrix_rows(&d.x1),
            f1: d.f1.iter().copied().collect(),
            x2: matrix_rows(&d.x2),
            f2: d.f2.iter().copied().collect(),
        }
    }

    pub fn to_dataset(&self, dim: usize) -> Result<Dataset<f64>> {
        if self.x1.iter().chain(&self.x2).any(|r| r.len() != dim) {
            return Err(Error::invalid(format!("stored inputs are not {dim}-dimensional")));
        }
        Dataset::new(
            rows_to_matrix(&self.x1, dim),
            DVector::from_vec(self.f1.clone()),
            rows_to_matrix(&self.x2, dim),
            DVector::from_vec(self.f2.clone()),
        )
    }
}

/// Everything needed to rebuild a fitted model without the original files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    /// `"identity"` or the layer widths, e.g. `"3-2"`.
    pub arch: String,
    pub architecture: Architecture,
    pub frozen: bool,
    pub layers: Vec<LayerRecord>,
    pub rho: f64,
    pub k1: KernelParams<f64>,
    pub k2: KernelParams<f64>,
    pub log_noise1: f64,
    pub log_noise2: f64,
    pub target_mean: f64,
    pub target_scale: f64,
    pub jitter: f64,
    pub training: TrainingRecord,
    pub data: DataRecord,
}

impl ModelFile {
    pub fn from_report(report: &TrainReport<f64>, data: &Dataset<f64>, baseline: Option<String>) -> Self {
        let p = &report.best_params;
        let arch = if p.fmap.is_identity() {
            "identity".to_string()
        } else {
            p.fmap.arch.widths_string()
        };
        let layers = p
            .fmap
            .params
            .layers
            .iter()
            .map(|l| LayerRecord {
                weights: (0..l.weights.nrows())
                    .flat_map(|i| l.weights.row(i).iter().copied().collect::<Vec<_>>())
                    .collect(),
                bias: l.bias.iter().copied().collect(),
            })
            .collect();
        Self {
            arch,
            architecture: p.fmap.arch.clone(),
            frozen: p.fmap.frozen,
            layers,
            rho: p.rho,
            k1: p.k1.clone(),
            k2: p.k2.clone(),
            log_noise1: p.log_noise1,
            log_noise2: p.log_noise2,
            target_mean: report.standardization.mean,
            target_scale: report.standardization.scale,
            jitter: report.jitter,
            training: TrainingRecord {
                seed: report.per_restart.first().map_or(0, |r| r.seed),
                restarts: report.per_restart.len(),
                best_nll: report.best_nll,
                best_restart: report.best_restart,
                baseline,
                per_restart: report
                    .per_restart
                    .iter()
                    .map(|r| RestartRecord {
                        restart: r.restart,
                        final_nll: r.final_nll,
                        iterations: r.iterations,
                        converged: r.converged,
                        error: r.error.clone(),
                    })
                    .collect(),
            },
            data: DataRecord::from_dataset(data),
        }
    }

    pub fn params(&self) -> Result<ModelParams<f64>> {
        self.architecture.validate()?;
        let flat: Vec<f64> = self
            .layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect();
        if self.layers.len() != self.architecture.layers.len() {
            return Err(Error::invalid("layer count does not match the architecture"));
        }
        for (i, (l, s)) in self.layers.iter().zip(&self.architecture.layers).enumerate() {
            if l.weights.len() != s.input_width * s.output_width || l.bias.len() != s.output_width {
                return Err(Error::invalid(format!("layer {i} parameter shape mismatch")));
            }
        }
        let params = FeatureMapParams::from_slice(&self.architecture, &flat)?;
        params.check(&self.architecture)?;
        let fmap = FeatureMap {
            arch: self.architecture.clone(),
            params,
            frozen: self.frozen,
        };
        let params = ModelParams {
            rho: self.rho,
            k1: self.k1.clone(),
            k2: self.k2.clone(),
            fmap,
            log_noise1: self.log_noise1,
            log_noise2: self.log_noise2,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn dataset(&self) -> Result<Dataset<f64>> {
        self.data.to_dataset(self.architecture.input_width())
    }

    pub fn standardization(&self) -> Standardization<f64> {
        Standardization {
            mean: self.target_mean,
            scale: self.target_scale,
        }
    }

    /// Rebuilds the fitted model, refactoring the covariance.
    pub fn surrogate(&self) -> Result<Surrogate<f64>> {
        Surrogate::new(self.params()?, self.dataset()?, self.standardization(), self.jitter)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }

    pub fn from_json(path: &Path, text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

pub fn write_model(path: &Path, model: &ModelFile) -> Result<()> {
    write_text(path, &model.to_json())
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    ModelFile::from_json(path, &read_text(path)?)
}

/// `data.csv` → `data.test.csv`.
pub fn test_path_for(data_path: &Path) -> PathBuf {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    data_path.with_file_name(format!("{stem}.test.csv"))
}
