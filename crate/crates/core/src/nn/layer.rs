//! Dense layers and small multi-layer stacks with hand-written backward passes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Softmax,
    Identity,
}

impl Activation {
    fn apply_row(self, row: &mut [f64]) {
        match self {
            Activation::Sigmoid => row.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => row.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Softmax => softmax_in_place(row),
            Activation::Identity => {}
        }
    }

    /// Gradient w.r.t. the pre-activation, given the activation output and
    /// the upstream gradient w.r.t. that output.
    fn backward_row(self, output: &[f64], upstream: &[f64], dst: &mut [f64]) {
        match self {
            Activation::Sigmoid => {
                for ((d, &y), &g) in dst.iter_mut().zip(output).zip(upstream) {
                    *d = g * y * (1.0 - y);
                }
            }
            Activation::Tanh => {
                for ((d, &y), &g) in dst.iter_mut().zip(output).zip(upstream) {
                    *d = g * (1.0 - y * y);
                }
            }
            Activation::Relu => {
                for ((d, &y), &g) in dst.iter_mut().zip(output).zip(upstream) {
                    *d = if y > 0.0 { g } else { 0.0 };
                }
            }
            Activation::Softmax => softmax_backward(output, upstream, dst),
            Activation::Identity => dst.copy_from_slice(upstream),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Softmax => "softmax",
            Activation::Identity => "identity",
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "sigmoid" => Activation::Sigmoid,
            "tanh" => Activation::Tanh,
            "relu" => Activation::Relu,
            "softmax" => Activation::Softmax,
            "identity" => Activation::Identity,
            other => return Err(Error::Validation(format!("unknown activation `{other}`"))),
        })
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax, max-shifted.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    row.iter_mut().for_each(|v| *v /= total);
}

pub fn softmax(values: &[f64]) -> Vec<f64> {
    let mut out = values.to_vec();
    softmax_in_place(&mut out);
    out
}

/// Vector-Jacobian product of softmax: `y ⊙ (g − ⟨g, y⟩)`.
pub fn softmax_backward(output: &[f64], upstream: &[f64], dst: &mut [f64]) {
    let inner: f64 = output.iter().zip(upstream).map(|(y, g)| y * g).sum();
    for ((d, &y), &g) in dst.iter_mut().zip(output).zip(upstream) {
        *d = y * (g - inner);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl DenseGrads {
    pub fn zeros_like(layer: &Dense) -> Self {
        Self {
            weights: Matrix::zeros(layer.out_dim(), layer.in_dim()),
            bias: vec![0.0; layer.out_dim()],
        }
    }

    pub fn into_vecs(self) -> [Vec<f64>; 2] {
        [self.weights.into_vec(), self.bias]
    }
}

/// `y = activation(x · Wᵀ + b)` applied row-wise. Weights are `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    weights: Matrix,
    bias: Vec<f64>,
    activation: Activation,
}

impl Dense {
    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Self {
            weights: Matrix::from_vec(out_dim, in_dim, data).expect("sized by construction"),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    pub fn from_parts(weights: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::dimension("Dense bias", weights.rows(), bias.len()));
        }
        Ok(Self {
            weights,
            bias,
            activation,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        if input.cols() != self.in_dim() {
            return Err(Error::dimension("dense forward input", self.in_dim(), input.cols()));
        }
        let mut out = input.matmul_transposed(&self.weights)?;
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += b;
            }
            self.activation.apply_row(row);
        }
        Ok(out)
    }

    /// Returns parameter gradients and the gradient w.r.t. `input`.
    /// `output` must be the result of `forward(input)`.
    pub fn backward(&self, input: &Matrix, output: &Matrix, upstream: &Matrix) -> Result<(DenseGrads, Matrix)> {
        if input.cols() != self.in_dim() {
            return Err(Error::dimension("dense backward input", self.in_dim(), input.cols()));
        }
        output.ensure_shape(input.rows(), self.out_dim(), "dense backward output")?;
        upstream.ensure_same_shape(output, "dense backward upstream")?;

        let mut pre = Matrix::zeros(output.rows(), output.cols());
        for r in 0..output.rows() {
            self.activation
                .backward_row(output.row(r), upstream.row(r), pre.row_mut(r));
        }
        let weights = pre.transposed_matmul(input)?;
        let bias = pre.column_sums();
        let input_grad = pre.matmul(&self.weights)?;
        Ok((DenseGrads { weights, bias }, input_grad))
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        vec![
            (format!("{prefix}.weight"), self.weights.as_mut_slice()),
            (format!("{prefix}.bias"), self.bias.as_mut_slice()),
        ]
    }
}

/// A stack of dense layers applied in sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Validation("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dimension(
                    format!("MLP layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self { layers })
    }

    /// Glorot-initialized stack; `widths` includes input and output widths.
    pub fn glorot<R: Rng + ?Sized>(widths: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        if widths.len() != activations.len() + 1 {
            return Err(Error::dimension("MLP spec", widths.len() - 1, activations.len()));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Validation("layer widths must be positive".into()));
        }
        let layers = widths
            .windows(2)
            .zip(activations)
            .map(|(w, &act)| Dense::glorot(w[0], w[1], act, rng))
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, input: &Matrix) -> Result<Matrix> {
        let mut x = self.layers[0].forward(input)?;
        for layer in &self.layers[1..] {
            x = layer.forward(&x)?;
        }
        Ok(x)
    }

    /// Forward pass keeping every layer output; the last entry is the network output.
    pub fn forward_trace(&self, input: &Matrix) -> Result<Vec<Matrix>> {
        let mut trace: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &trace[i - 1] };
            let y = layer.forward(x)?;
            trace.push(y);
        }
        Ok(trace)
    }

    pub fn backward(&self, input: &Matrix, trace: &[Matrix], upstream: &Matrix) -> Result<(Vec<DenseGrads>, Matrix)> {
        if trace.len() != self.layers.len() {
            return Err(Error::dimension("MLP trace", self.layers.len(), trace.len()));
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = upstream.clone();
        for i in (0..self.layers.len()).rev() {
            let x = if i == 0 { input } else { &trace[i - 1] };
            let (pg, ig) = self.layers[i].backward(x, &trace[i], &g)?;
            grads.push(pg);
            g = ig;
        }
        grads.reverse();
        Ok((grads, g))
    }

    pub fn params_mut(&mut self, prefix: &str) -> Vec<(String, &mut [f64])> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, l)| l.params_mut(&format!("{prefix}.{i}")))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::parameter_count).sum()
    }
}

/// Flatten per-layer gradients into the order used by `params_mut`.
pub fn flatten_grads(grads: Vec<DenseGrads>) -> Vec<Vec<f64>> {
    grads.into_iter().flat_map(DenseGrads::into_vecs).collect()
}
