//! Multilayer feature map `h(x) = (h^L ∘ … ∘ h^1)(x)` with
//! `h^l(z) = σ_l(W_l z + b_l)`.
//!
//! Inputs are row-major point sets: `X` is `n × d_in` and the output is
//! `n × d_out`. Activations are recomputed in `backward`; nothing is cached
//! between calls.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transfer {
    Sigmoid,
    Identity,
}

impl Transfer {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Transfer::Identity => z,
            Transfer::Sigmoid => sigmoid(z),
        }
    }

    /// Derivative expressed through the activation value `a = σ(z)`.
    #[inline]
    fn derivative_from_output<T: Real>(self, a: T) -> T {
        match self {
            Transfer::Identity => T::one(),
            Transfer::Sigmoid => a * (T::one() - a),
        }
    }
}

/// Logistic function, split by sign so `exp` never overflows.
#[inline]
pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_width: usize,
    pub output_width: usize,
    pub transfer: Transfer,
}

/// Chain of layer shapes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        let arch = Self { layers };
        arch.validate()?;
        Ok(arch)
    }

    /// Hidden sigmoid layers followed by an affine output layer.
    ///
    /// `widths = [3, 2]` with `input_width = 1` gives `1 → 3 (sigmoid) → 2`.
    pub fn mlp(input_width: usize, widths: &[usize]) -> Result<Self> {
        if widths.is_empty() {
            return Err(Error::invalid("architecture needs at least one layer"));
        }
        let mut layers = Vec::with_capacity(widths.len());
        let mut prev = input_width;
        for (i, &w) in widths.iter().enumerate() {
            let transfer = if i + 1 == widths.len() {
                Transfer::Identity
            } else {
                Transfer::Sigmoid
            };
            layers.push(LayerSpec {
                input_width: prev,
                output_width: w,
                transfer,
            });
            prev = w;
        }
        Self::new(layers)
    }

    /// The `[3-2]` network used for all three benchmarks.
    pub fn default_sigmoid(input_width: usize) -> Self {
        Self::mlp(input_width, &[3, 2]).expect("static architecture")
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("architecture needs at least one layer"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.input_width == 0 || l.output_width == 0 {
                return Err(Error::invalid(format!("layer {i} has zero width")));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].output_width != pair[1].input_width {
                return Err(Error::invalid(format!(
                    "layer {} outputs {} but layer {} expects {}",
                    i,
                    pair[0].output_width,
                    i + 1,
                    pair[1].input_width
                )));
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].input_width
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].output_width
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.output_width * (l.input_width + 1))
            .sum()
    }

    /// Layer output widths joined as `"3-2"`; parses back as [`HiddenWidths`].
    pub fn widths_string(&self) -> String {
        self.layers
            .iter()
            .map(|l| l.output_width.to_string())
            .collect::<Vec<_>>()
            .join("-")
    }
}

/// Layer widths parsed from strings such as `"3-2"`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HiddenWidths(pub Vec<usize>);

impl FromStr for HiddenWidths {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let widths = s
            .split('-')
            .map(|t| {
                t.trim()
                    .parse::<usize>()
                    .ok()
                    .filter(|w| *w > 0)
                    .ok_or_else(|| Error::invalid(format!("bad layer width {t:?} in {s:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HiddenWidths(widths))
    }
}

impl fmt::Display for HiddenWidths {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|w| w.to_string()).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Real> {
    /// `output_width × input_width`
    pub weights: DMatrix<T>,
    pub bias: DVector<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMapParams<T: Real> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> FeatureMapParams<T> {
    pub fn zeros(arch: &Architecture) -> Self {
        Self {
            layers: arch
                .layers
                .iter()
                .map(|l| Layer {
                    weights: DMatrix::zeros(l.output_width, l.input_width),
                    bias: DVector::zeros(l.output_width),
                })
                .collect(),
        }
    }

    pub fn check(&self, arch: &Architecture) -> Result<()> {
        if self.layers.len() != arch.layers.len() {
            return Err(Error::invalid(format!(
                "{} parameter layers for a {}-layer architecture",
                self.layers.len(),
                arch.layers.len()
            )));
        }
        for (i, (p, s)) in self.layers.iter().zip(&arch.layers).enumerate() {
            if p.weights.shape() != (s.output_width, s.input_width) || p.bias.len() != s.output_width {
                return Err(Error::invalid(format!("layer {i} parameter shape mismatch")));
            }
            if !p.weights.iter().chain(p.bias.iter()).all(|v| v.is_finite()) {
                return Err(Error::invalid(format!("layer {i} has non-finite parameters")));
            }
        }
        Ok(())
    }

    /// Flattened `[W_1 (row-major), b_1, …, W_L, b_L]`.
    pub fn to_vec(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            for i in 0..l.weights.nrows() {
                out.extend(l.weights.row(i).iter().copied());
            }
            out.extend(l.bias.iter().copied());
        }
        out
    }

    /// Inverse of [`to_vec`](Self::to_vec).
    pub fn from_slice(arch: &Architecture, values: &[T]) -> Result<Self> {
        if values.len() != arch.n_params() {
            return Err(Error::invalid(format!(
                "expected {} feature-map parameters, got {}",
                arch.n_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        let layers = arch
            .layers
            .iter()
            .map(|s| {
                let weights = DMatrix::from_row_iterator(
                    s.output_width,
                    s.input_width,
                    it.by_ref().take(s.output_width * s.input_width),
                );
                let bias = DVector::from_iterator(s.output_width, it.by_ref().take(s.output_width));
                Layer { weights, bias }
            })
            .collect();
        Ok(Self { layers })
    }
}

/// Architecture, parameters and whether the parameters are trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T: Real> {
    pub arch: Architecture,
    pub params: FeatureMapParams<T>,
    /// Frozen maps are excluded from training and report zero gradients.
    pub frozen: bool,
}

impl<T: Real> FeatureMap<T> {
    pub fn forward(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        forward(&self.arch, &self.params, x)
    }

    pub fn is_identity(&self) -> bool {
        self.frozen
            && self.arch.layers.len() == 1
            && self.arch.layers[0].transfer == Transfer::Identity
            && self.params.layers[0].weights
                == DMatrix::identity(self.arch.input_width(), self.arch.output_width())
            && self.params.layers[0].bias.iter().all(|b| *b == T::zero())
    }
}

/// `h(x) = x` on `dim`-dimensional inputs, frozen.
pub fn identity_map<T: Real>(dim: usize) -> FeatureMap<T> {
    let arch = Architecture {
        layers: vec![LayerSpec {
            input_width: dim,
            output_width: dim,
            transfer: Transfer::Identity,
        }],
    };
    let params = FeatureMapParams {
        layers: vec![Layer {
            weights: DMatrix::identity(dim, dim),
            bias: DVector::zeros(dim),
        }],
    };
    FeatureMap {
        arch,
        params,
        frozen: true,
    }
}

fn check_input<T: Real>(arch: &Architecture, params: &FeatureMapParams<T>, x: &DMatrix<T>) -> Result<()> {
    arch.validate()?;
    params.check(arch)?;
    if x.ncols() != arch.input_width() {
        return Err(Error::invalid(format!(
            "input has {} columns, feature map expects {}",
            x.ncols(),
            arch.input_width()
        )));
    }
    Ok(())
}

fn layer_forward<T: Real>(spec: &LayerSpec, layer: &Layer<T>, input: &DMatrix<T>) -> DMatrix<T> {
    let mut z = input * layer.weights.transpose();
    for mut row in z.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(layer.bias.iter()) {
            *v = spec.transfer.apply(*v + *b);
        }
    }
    z
}

/// Applies the map to every row of `x`.
pub fn forward<T: Real>(
    arch: &Architecture,
    params: &FeatureMapParams<T>,
    x: &DMatrix<T>,
) -> Result<DMatrix<T>> {
    check_input(arch, params, x)?;
    let mut a = x.clone();
    for (spec, layer) in arch.layers.iter().zip(&params.layers) {
        a = layer_forward(spec, layer, &a);
    }
    Ok(a)
}

/// Vector-Jacobian product `Σ_i Σ_k adjoint[i,k] · ∂h_k(x_i)/∂θ_h`.
pub fn backward<T: Real>(
    arch: &Architecture,
    params: &FeatureMapParams<T>,
    x: &DMatrix<T>,
    adjoint: &DMatrix<T>,
) -> Result<FeatureMapParams<T>> {
    check_input(arch, params, x)?;
    if adjoint.shape() != (x.nrows(), arch.output_width()) {
        return Err(Error::invalid(format!(
            "adjoint has shape {:?}, expected ({}, {})",
            adjoint.shape(),
            x.nrows(),
            arch.output_width()
        )));
    }

    // activations[l] is the input to layer l; the last entry is the output.
    let mut activations = Vec::with_capacity(arch.layers.len() + 1);
    activations.push(x.clone());
    for (spec, layer) in arch.layers.iter().zip(&params.layers) {
        let next = layer_forward(spec, layer, activations.last().expect("non-empty"));
        activations.push(next);
    }

    let mut grads: Vec<Layer<T>> = Vec::with_capacity(arch.layers.len());
    let mut delta = adjoint.clone();
    for l in (0..arch.layers.len()).rev() {
        let spec = &arch.layers[l];
        let out = &activations[l + 1];
        // Through the transfer function: δ ← δ ⊙ σ'(z).
        for (d, a) in delta.iter_mut().zip(out.iter()) {
            *d *= spec.transfer.derivative_from_output(*a);
        }
        let input = &activations[l];
        let weights = delta.transpose() * input;
        let bias = DVector::from_iterator(
            delta.ncols(),
            delta.column_iter().map(|c| c.iter().fold(T::zero(), |s, v| s + *v)),
        );
        if l > 0 {
            delta = &delta * &params.layers[l].weights;
        }
        grads.push(Layer { weights, bias });
    }
    grads.reverse();
    Ok(FeatureMapParams { layers: grads })
}
