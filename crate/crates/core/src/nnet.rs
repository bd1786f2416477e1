//! Dense feed-forward networks with exact reverse-mode gradients and Adam.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softplus,
    Identity,
    Softmax,
}

/// Numerically stable ln(1 + e^z).
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl Activation {
    fn apply(self, z: &[f64]) -> Vec<f64> {
        match self {
            Activation::Relu => z.iter().map(|v| v.max(0.0)).collect(),
            Activation::Softplus => z.iter().map(|&v| softplus(v)).collect(),
            Activation::Identity => z.to_vec(),
            Activation::Softmax => softmax(z),
        }
    }

    /// Maps dL/d(output) to dL/d(pre-activation).
    fn backprop(self, pre: &[f64], out: &[f64], d_out: &[f64]) -> Vec<f64> {
        match self {
            // subgradient 0 at the kink
            Activation::Relu => pre
                .iter()
                .zip(d_out)
                .map(|(&z, &d)| if z > 0.0 { d } else { 0.0 })
                .collect(),
            Activation::Softplus => pre.iter().zip(d_out).map(|(&z, &d)| d * sigmoid(z)).collect(),
            Activation::Identity => d_out.to_vec(),
            Activation::Softmax => {
                let dot: f64 = out.iter().zip(d_out).map(|(s, d)| s * d).sum();
                out.iter().zip(d_out).map(|(s, d)| s * (d - dot)).collect()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub rows: usize,
    pub cols: usize,
    pub activation: Activation,
    /// Row-major `rows × cols`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.cols)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub size: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(size: usize, activation: Activation) -> Self {
        Self { size, activation }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNetwork {
    pub input_dim: usize,
    pub layers: Vec<DenseLayer>,
    pub seed: u64,
}

/// Per-layer values recorded by [`DenseNetwork::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    outputs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Gradients mirroring a network's parameters, plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGradient>,
    pub d_input: Vec<f64>,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
            d_input: vec![0.0; net.input_dim],
        }
    }

    pub fn add_assign(&mut self, other: &GradientBundle) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
        self.d_input.iter_mut().zip(&other.d_input).for_each(|(x, y)| *x += y);
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|x| *x *= k);
            l.bias.iter_mut().for_each(|x| *x *= k);
        }
        self.d_input.iter_mut().for_each(|x| *x *= k);
    }

    /// Parameter gradients flattened in network order (weights then bias, per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.flat_params().iter().all(|v| v.is_finite())
            && self.d_input.iter().all(|v| v.is_finite())
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights, zero biases, deterministic per seed.
    pub fn init(input_dim: usize, spec: &[LayerSpec], seed: u64) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        if input_dim == 0 || spec.iter().any(|l| l.size == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(spec.len());
        for l in spec {
            let bound = (6.0 / (fan_in + l.size) as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound)
                .map_err(|e| Error::Config(format!("weight init: {e}")))?;
            let weights = (0..l.size * fan_in).map(|_| dist.sample(&mut rng)).collect();
            layers.push(DenseLayer {
                rows: l.size,
                cols: fan_in,
                activation: l.activation,
                weights,
                bias: vec![0.0; l.size],
            });
            fan_in = l.size;
        }
        let net = Self {
            input_dim,
            layers,
            seed,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("network has no layers".into()));
        }
        let mut expect = self.input_dim;
        let last = self.layers.len() - 1;
        for (k, l) in self.layers.iter().enumerate() {
            if l.cols != expect {
                return Err(Error::Shape(format!(
                    "layer {k} expects {} inputs but previous layer gives {expect}",
                    l.cols
                )));
            }
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Shape(format!("layer {k} parameter lengths do not match {}x{}", l.rows, l.cols)));
            }
            if l.activation == Activation::Softmax && k != last {
                return Err(Error::Config(format!("softmax only allowed on the final layer (found at {k})")));
            }
            expect = l.rows;
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(x)?;
        let mut tape = Tape {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            outputs: Vec::with_capacity(self.layers.len()),
        };
        let mut h = x.to_vec();
        for l in &self.layers {
            let z = l.affine(&h);
            let out = l.activation.apply(&z);
            tape.inputs.push(std::mem::replace(&mut h, out.clone()));
            tape.pre.push(z);
            tape.outputs.push(out);
        }
        Ok((h, tape))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        for l in &self.layers {
            h = l.activation.apply(&l.affine(&h));
        }
        Ok(h)
    }

    /// Sign of every ReLU pre-activation, layer by layer. Parameter settings
    /// with equal patterns at an input lie on the same smooth piece there.
    pub fn relu_pattern(&self, x: &[f64]) -> Result<Vec<bool>> {
        self.check_input(x)?;
        let mut h = x.to_vec();
        let mut pattern = Vec::new();
        for l in &self.layers {
            let z = l.affine(&h);
            if l.activation == Activation::Relu {
                pattern.extend(z.iter().map(|v| *v > 0.0));
            }
            h = l.activation.apply(&z);
        }
        Ok(pattern)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        let ok = tape.inputs.len() == self.layers.len()
            && self
                .layers
                .iter()
                .zip(&tape.inputs)
                .zip(&tape.pre)
                .all(|((l, i), z)| i.len() == l.cols && z.len() == l.rows);
        if ok {
            Ok(())
        } else {
            Err(Error::Shape("tape does not match network".into()))
        }
    }

    /// Gradients of `output · d_output` with respect to every parameter and the input.
    pub fn backward(&self, tape: &Tape, d_output: &[f64]) -> Result<GradientBundle> {
        self.check_tape(tape)?;
        let last = self.layers.len() - 1;
        if d_output.len() != self.layers[last].rows {
            return Err(Error::Shape(format!(
                "d_output has length {}, network output is {}",
                d_output.len(),
                self.layers[last].rows
            )));
        }
        let delta = self.layers[last]
            .activation
            .backprop(&tape.pre[last], &tape.outputs[last], d_output);
        self.backward_from_preactivation(tape, delta)
    }

    /// Backward pass seeded with the gradient at the final pre-activation
    /// (for example `softmax - target` under cross-entropy).
    pub fn backward_from_preactivation(&self, tape: &Tape, mut delta: Vec<f64>) -> Result<GradientBundle> {
        self.check_tape(tape)?;
        let mut grads = GradientBundle::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let l = &self.layers[k];
            let input = &tape.inputs[k];
            let g = &mut grads.layers[k];
            for (r, d) in delta.iter().enumerate() {
                g.bias[r] = *d;
                let row = &mut g.weights[r * l.cols..(r + 1) * l.cols];
                row.iter_mut().zip(input).for_each(|(w, x)| *w = d * x);
            }
            let mut d_in = vec![0.0; l.cols];
            for (r, d) in delta.iter().enumerate() {
                let row = &l.weights[r * l.cols..(r + 1) * l.cols];
                d_in.iter_mut().zip(row).for_each(|(a, w)| *a += d * w);
            }
            if k == 0 {
                grads.d_input = d_in;
            } else {
                let prev = &self.layers[k - 1];
                delta = prev.activation.backprop(&tape.pre[k - 1], &tape.outputs[k - 1], &d_in);
            }
        }
        Ok(grads)
    }

    /// All parameters flattened in the same order as [`GradientBundle::flat_params`].
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    /// Mutable access to the `i`-th parameter in flattened order.
    pub fn param_mut(&mut self, mut i: usize) -> &mut f64 {
        for l in &mut self.layers {
            if i < l.weights.len() {
                return &mut l.weights[i];
            }
            i -= l.weights.len();
            if i < l.bias.len() {
                return &mut l.bias[i];
            }
            i -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let net: Self = serde_json::from_str(s)?;
        net.validate()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Adam optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<LayerGradient>,
    v: Vec<LayerGradient>,
    pub t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &DenseNetwork, lr: f64) -> Self {
        let zeros = GradientBundle::zeros_like(net).layers;
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut DenseNetwork, grads: &GradientBundle) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        };
        for (k, layer) in net.layers.iter_mut().enumerate() {
            update(&mut layer.weights, &grads.layers[k].weights, &mut self.m[k].weights, &mut self.v[k].weights);
            update(&mut layer.bias, &grads.layers[k].bias, &mut self.m[k].bias, &mut self.v[k].bias);
        }
    }
}

/// Applies one Adam step; free-function form of [`AdamState::step`].
pub fn adam_step(net: &mut DenseNetwork, grads: &GradientBundle, state: &mut AdamState) {
    state.step(net, grads);
}
