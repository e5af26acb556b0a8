//! Fully connected feature extractor `phi: R^p -> R^d` with a recorded forward
//! pass and an explicit reverse pass.
//!
//! Hidden layers apply the configured activation; the output layer is linear.
//! Parameters are flattened layer by layer, each layer as its row-major
//! `out x in` weight matrix followed by its bias vector.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractorSpec {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub init_scale: f64,
}

impl ExtractorSpec {
    /// Single linear map `R^p -> R^d`.
    pub fn linear(input_dim: usize, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: Vec::new(),
            output_dim,
            activation: Activation::Tanh,
            init_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::InvalidSpec(
                "extractor dimensions must all be at least 1".into(),
            ));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "extractor init_scale must be positive (got {})",
                self.init_scale
            )));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_dims.len() + 1
    }

    pub fn n_params(&self) -> usize {
        self.dims().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorParams {
    pub layers: Vec<DenseLayer>,
}

impl ExtractorParams {
    pub fn zeros(spec: &ExtractorSpec) -> Self {
        Self {
            layers: spec
                .dims()
                .windows(2)
                .map(|w| DenseLayer::zeros(w[0], w[1]))
                .collect(),
        }
    }

    /// Identity weights for a single-layer square extractor.
    pub fn identity(spec: &ExtractorSpec) -> Result<Self> {
        if !spec.hidden_dims.is_empty() || spec.input_dim != spec.output_dim {
            return Err(Error::InvalidSpec(
                "identity extractor needs no hidden layers and input_dim == output_dim".into(),
            ));
        }
        let mut params = Self::zeros(spec);
        let layer = &mut params.layers[0];
        for i in 0..spec.input_dim {
            layer.weights[i * spec.input_dim + i] = 1.0;
        }
        Ok(params)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(&layer.weights);
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn unflatten(spec: &ExtractorSpec, flat: &[f64]) -> Result<Self> {
        let expected = spec.n_params();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "extractor parameters",
                expected,
                found: flat.len(),
            });
        }
        let mut params = Self::zeros(spec);
        let mut offset = 0;
        for layer in &mut params.layers {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(params)
    }

    fn matches(&self, spec: &ExtractorSpec) -> bool {
        let dims = spec.dims();
        self.layers.len() == dims.len() - 1
            && self.layers.iter().zip(dims.windows(2)).all(|(l, w)| {
                l.in_dim == w[0]
                    && l.out_dim == w[1]
                    && l.weights.len() == w[0] * w[1]
                    && l.bias.len() == w[1]
            })
    }
}

/// Seeded initialization: weights uniform in `+/- init_scale / sqrt(fan_in)`,
/// biases zero.
pub fn init_params(spec: &ExtractorSpec, seed: u64) -> ExtractorParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ExtractorParams::zeros(spec);
    for layer in &mut params.layers {
        let bound = spec.init_scale / (layer.in_dim as f64).sqrt();
        for w in &mut layer.weights {
            *w = rng.gen_range(-bound..=bound);
        }
    }
    params
}

/// Activation record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Tape {
    input: Vec<f64>,
    /// Output of every layer; the last entry is the feature vector.
    outputs: Vec<Vec<f64>>,
}

impl Tape {
    pub fn features(&self) -> &[f64] {
        self.outputs.last().map_or(&[], Vec::as_slice)
    }
}

pub fn extractor_forward(
    spec: &ExtractorSpec,
    params: &ExtractorParams,
    x: &[f64],
) -> Result<(Vec<f64>, Tape)> {
    if x.len() != spec.input_dim {
        return Err(Error::DimensionMismatch {
            context: "extractor input",
            expected: spec.input_dim,
            found: x.len(),
        });
    }
    if !params.matches(spec) {
        return Err(Error::DimensionMismatch {
            context: "extractor parameters",
            expected: spec.n_params(),
            found: params.n_params(),
        });
    }
    let last = params.layers.len() - 1;
    let mut outputs: Vec<Vec<f64>> = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let input: &[f64] = if l == 0 { x } else { &outputs[l - 1] };
        let mut z = layer.forward(input);
        if l < last {
            for v in &mut z {
                *v = spec.activation.apply(*v);
            }
        }
        outputs.push(z);
    }
    let tape = Tape {
        input: x.to_vec(),
        outputs,
    };
    Ok((tape.features().to_vec(), tape))
}

/// Gradients of `upstream . phi(x)` with respect to the flattened parameters
/// and to the input `x`.
pub fn extractor_backward(
    spec: &ExtractorSpec,
    params: &ExtractorParams,
    tape: &Tape,
    upstream: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut grad = vec![0.0; params.n_params()];
    let grad_x = extractor_backward_into(spec, params, tape, upstream, &mut grad)?;
    Ok((grad, grad_x))
}

/// As [`extractor_backward`], accumulating the parameter gradient into
/// `grad_params` (flattened layout).
pub fn extractor_backward_into(
    spec: &ExtractorSpec,
    params: &ExtractorParams,
    tape: &Tape,
    upstream: &[f64],
    grad_params: &mut [f64],
) -> Result<Vec<f64>> {
    let n_layers = params.layers.len();
    if !params.matches(spec)
        || tape.outputs.len() != n_layers
        || tape.input.len() != spec.input_dim
        || tape
            .outputs
            .iter()
            .zip(&params.layers)
            .any(|(o, l)| o.len() != l.out_dim)
    {
        return Err(Error::TapeMismatch);
    }
    if upstream.len() != spec.output_dim {
        return Err(Error::DimensionMismatch {
            context: "extractor upstream gradient",
            expected: spec.output_dim,
            found: upstream.len(),
        });
    }
    if grad_params.len() != params.n_params() {
        return Err(Error::DimensionMismatch {
            context: "extractor gradient buffer",
            expected: params.n_params(),
            found: grad_params.len(),
        });
    }

    // offsets of each layer in the flat layout
    let mut offsets = Vec::with_capacity(n_layers);
    let mut acc = 0;
    for layer in &params.layers {
        offsets.push(acc);
        acc += layer.weights.len() + layer.bias.len();
    }

    let mut delta = upstream.to_vec();
    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let input: &[f64] = if l == 0 {
            &tape.input
        } else {
            &tape.outputs[l - 1]
        };
        let off = offsets[l];
        let (gw, gb) = grad_params[off..off + layer.weights.len() + layer.bias.len()]
            .split_at_mut(layer.weights.len());
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            gb[o] += d;
            for (g, &v) in gw[o * layer.in_dim..(o + 1) * layer.in_dim]
                .iter_mut()
                .zip(input)
            {
                *g += d * v;
            }
        }
        let mut prev = vec![0.0; layer.in_dim];
        for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
            for (p, &w) in prev.iter_mut().zip(row) {
                *p += d * w;
            }
        }
        if l > 0 {
            for (p, &y) in prev.iter_mut().zip(&tape.outputs[l - 1]) {
                *p *= spec.activation.grad_from_output(y);
            }
        }
        delta = prev;
    }
    Ok(delta)
}
