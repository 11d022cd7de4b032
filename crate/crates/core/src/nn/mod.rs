//! Fully connected network from PCA coefficients to scaled material parameters.
//!
//! Samples are columns: a batch of `b` inputs is an `in x b` matrix.

mod adam;
mod checkpoint;
mod gemm;
mod loss;
mod scaler;
mod train;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use loss::{
    batch_loss, per_param_errors, sample_loss, vector_relative_loss, Objective,
};
pub use scaler::{ParamScaler, ScalingMode};
pub use train::{
    evaluate_per_param, predict, predict_batch, train, write_history_csv, EpochRecord, TrainConfig, TrainData,
    TrainOutcome,
};

use crate::error::{Error, Result};

/// Layer widths between the 50 coefficients and the 7 parameters.
pub const DEFAULT_HIDDEN: [usize; 5] = [500, 1000, 2000, 1000, 500];

const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    Relu,
    Softplus,
    #[default]
    Selu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA * x
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    SELU_LAMBDA * SELU_ALPHA * x.exp()
                }
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Softplus => "softplus",
            Activation::Selu => "selu",
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
        match s {
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            "selu" => Ok(Activation::Selu),
            _ => Err(Error::Config(format!(
                "unknown activation `{s}` (relu, softplus, selu)"
            ))),
        }
    }
}

/// Affine layer `W x + b` with `W` of shape `out x in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weights: DMatrix::zeros(n_out, n_in),
            bias: DVector::zeros(n_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weights.ncols(), self.weights.nrows())
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FcnModel {
    pub layers: Vec<Layer>,
    /// Applied after every layer except the last.
    pub activation: Activation,
    /// Inputs are mapped to `(x - input_shift) / input_scale` first.
    pub input_shift: DVector<f64>,
    pub input_scale: DVector<f64>,
}

/// Gradient of a scalar loss w.r.t. every weight and bias, shaped like the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn scale(&mut self, alpha: f64) {
        for l in &mut self.layers {
            l.weights *= alpha;
            l.bias *= alpha;
        }
    }

    /// All entries, layer by layer, weights (column-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }
}

fn flatten_layers(layers: &[Layer]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
        .collect()
}

/// Pre-activations and activations of one forward pass.
struct ForwardCache {
    /// `inputs[l]` is the input to layer `l`; the last entry is the output.
    inputs: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl FcnModel {
    /// Zero weights and biases, identity input map.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        check_sizes(layer_sizes)?;
        Ok(Self {
            layers: layer_sizes
                .windows(2)
                .map(|w| Layer::zeros(w[0], w[1]))
                .collect(),
            activation,
            input_shift: DVector::zeros(layer_sizes[0]),
            input_scale: DVector::from_element(layer_sizes[0], 1.0),
        })
    }

    /// Fan-in scaled uniform weights `U(-sqrt(3/fan_in), sqrt(3/fan_in))`, zero biases.
    pub fn initialized(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(layer_sizes, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = (3.0 / layer.weights.ncols() as f64).sqrt();
            // fill row by row so the draw order does not depend on storage layout
            for i in 0..layer.weights.nrows() {
                for j in 0..layer.weights.ncols() {
                    layer.weights[(i, j)] = rng.gen_range(-bound..bound);
                }
            }
        }
        Ok(model)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].weights.ncols()];
        sizes.extend(self.layers.iter().map(|l| l.weights.nrows()));
        sizes
    }

    pub fn n_inputs(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.layers.last().map_or(0, |l| l.weights.nrows())
    }

    pub fn n_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn parameters_flat(&self) -> Vec<f64> {
        flatten_layers(&self.layers)
    }

    /// Adds `delta` to the parameter at flat position `index` (see [`Gradients::flatten`]).
    pub fn perturb(&mut self, index: usize, delta: f64) {
        let mut idx = index;
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights.as_mut_slice()[idx] += delta;
                return;
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                l.bias[idx] += delta;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("parameter index {index} out of range");
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.n_inputs() {
            return Err(Error::DimensionMismatch {
                expected: self.n_inputs(),
                got: rows,
            });
        }
        Ok(())
    }

    fn normalize_inputs(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut a = x.clone();
        for mut col in a.column_iter_mut() {
            for ((v, s), c) in col.iter_mut().zip(self.input_shift.iter()).zip(self.input_scale.iter()) {
                *v = (*v - s) / c;
            }
        }
        a
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> ForwardCache {
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        inputs.push(self.normalize_inputs(x));
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = gemm::matmul(&layer.weights, false, &inputs[l], false);
            for mut col in z.column_iter_mut() {
                col += &layer.bias;
            }
            let a = if l + 1 < n {
                z.map(|v| self.activation.apply(v))
            } else {
                z.clone()
            };
            pre.push(z);
            inputs.push(a);
        }
        ForwardCache { inputs, pre }
    }

    /// Outputs for a batch of column inputs.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.nrows())?;
        Ok(self.forward_cached(x).inputs.pop().unwrap())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x.len())?;
        let out = self.forward_batch(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(out.as_slice().to_vec())
    }

    /// Loss and exact gradient for a batch of column inputs and targets.
    ///
    /// The `|.|` kink in the componentwise objective uses subgradient 0.
    pub fn backward(
        &self,
        x: &DMatrix<f64>,
        targets: &DMatrix<f64>,
        objective: Objective,
    ) -> Result<(f64, Gradients)> {
        self.check_input(x.nrows())?;
        if targets.nrows() != self.n_outputs() || targets.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch {
                expected: self.n_outputs() * x.ncols(),
                got: targets.len(),
            });
        }
        let cache = self.forward_cached(x);
        let (loss, mut delta) = objective.loss_and_output_grad(cache.inputs.last().unwrap(), targets)?;
        let mut grads: Vec<Layer> = self.layers.iter().map(Layer::zeros_like).collect();
        for l in (0..self.layers.len()).rev() {
            grads[l].weights = gemm::matmul(&delta, false, &cache.inputs[l], true);
            grads[l].bias = delta.column_sum();
            if l > 0 {
                let mut back = gemm::matmul(&self.layers[l].weights, true, &delta, false);
                back.zip_apply(&cache.pre[l - 1], |g, z| *g *= self.activation.derivative(z));
                delta = back;
            }
        }
        Ok((loss, Gradients { layers: grads }))
    }
}

fn check_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes {sizes:?} need at least two nonzero entries"
        )));
    }
    Ok(())
}
