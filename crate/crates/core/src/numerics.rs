//! Dense feed-forward classifier with hand-written reverse-mode gradients and
//! an Adam optimizer with decoupled weight decay.
//!
//! Layout:
//!
//! - weights are row-major with shape `(out_dim, in_dim)`
//! - hidden layers use `tanh`, the output layer is a softmax over `K` logits
//!
//! Gradients are always taken with respect to the *probabilities* produced by
//! the softmax head; the caller supplies `dL/dp` and [`DenseNet::accumulate`]
//! chains it through the softmax Jacobian and the hidden layers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, AsmError, Result};

/// Default Adam constants.
pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            biases: vec![0.0; out_dim],
        }
    }

    /// Glorot/Xavier uniform: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
    fn xavier<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-limit..limit))
            .collect();
        let biases = (0..out_dim).map(|_| rng.gen_range(-limit..limit)).collect();
        Self {
            in_dim,
            out_dim,
            weights,
            biases,
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(o, b)| {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    out
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input; `activations[l]` the output of hidden layer `l`.
    activations: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

impl Trace {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    #[serde(default)]
    seed: u64,
}

impl DenseNet {
    /// Xavier-initialized network. `layer_dims = [input, hidden.., classes]`.
    pub fn new(layer_dims: &[usize], seed: u64) -> Result<Self> {
        validate_dims(layer_dims)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer::xavier(w[0], w[1], &mut rng))
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            seed,
        })
    }

    /// All-zero parameters: the output is uniform for every input.
    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        validate_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            layers,
            seed: 0,
        })
    }

    /// Build from explicit layers, checking that they chain.
    pub fn from_layers(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(AsmError::config("network needs at least one layer"));
        }
        let mut dims = vec![layers[0].in_dim];
        for layer in &layers {
            check_len("layer input width", *dims.last().unwrap(), layer.in_dim)?;
            check_len(
                "layer weights",
                layer.in_dim * layer.out_dim,
                layer.weights.len(),
            )?;
            check_len("layer biases", layer.out_dim, layer.biases.len())?;
            dims.push(layer.out_dim);
        }
        validate_dims(&dims)?;
        Ok(Self {
            layer_dims: dims,
            layers,
            seed,
        })
    }

    /// Re-validates a deserialized network.
    pub fn validated(self) -> Result<Self> {
        let dims = self.layer_dims.clone();
        let net = Self::from_layers(self.layers, self.seed)?;
        if net.layer_dims != dims {
            return Err(AsmError::config(format!(
                "layer_dims {:?} disagree with layer shapes {:?}",
                dims, net.layer_dims
            )));
        }
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    /// All parameters flattened, layer by layer (weights then biases).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_len("flat parameters", self.num_params(), flat.len())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let n = l.biases.len();
            l.biases.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.probs)
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        check_len("input features", self.input_dim(), x.len())?;
        let mut activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        let last = self.layers.len() - 1;
        let mut z = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.affine(activations.last().unwrap(), &mut z);
            if i == last {
                break;
            }
            activations.push(z.iter().map(|v| v.tanh()).collect());
        }
        Ok(Trace {
            activations,
            probs: softmax(&z),
        })
    }

    /// Gradient of a scalar loss w.r.t. every parameter, given `upstream = dL/dp`.
    pub fn backward(&self, x: &[f64], upstream: &[f64]) -> Result<GradientBundle> {
        let trace = self.forward_trace(x)?;
        let mut grads = GradientBundle::zeros_like(self);
        self.accumulate(&trace, upstream, &mut grads)?;
        Ok(grads)
    }

    /// Adds the parameter gradient for one cached forward pass into `grads`.
    pub fn accumulate(
        &self,
        trace: &Trace,
        upstream: &[f64],
        grads: &mut GradientBundle,
    ) -> Result<()> {
        check_len("upstream gradient", self.num_classes(), upstream.len())?;
        check_len("gradient layers", self.layers.len(), grads.layers.len())?;

        // Softmax Jacobian-vector product: dz_k = p_k (g_k - <g, p>).
        let p = &trace.probs;
        let dot: f64 = upstream.iter().zip(p).map(|(g, p)| g * p).sum();
        let mut delta: Vec<f64> = p.iter().zip(upstream).map(|(p, g)| p * (g - dot)).collect();

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.activations[li];
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if li == 0 {
                break;
            }
            // Through W^T, then through tanh' = 1 - a^2.
            let mut prev = vec![0.0; layer.in_dim];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (acc, w) in prev.iter_mut().zip(row) {
                    *acc += w * d;
                }
            }
            for (acc, a) in prev.iter_mut().zip(input) {
                *acc *= 1.0 - a * a;
            }
            delta = prev;
        }
        Ok(())
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return Err(AsmError::config(format!(
            "layer_dims needs at least input and output entries, got {dims:?}"
        )));
    }
    if dims.contains(&0) {
        return Err(AsmError::config(format!(
            "layer_dims entries must be positive, got {dims:?}"
        )));
    }
    if *dims.last().unwrap() < 2 {
        return Err(AsmError::config("output layer needs at least 2 classes"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

/// Parameter gradients shaped like a [`DenseNet`], plus the scalar loss they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle {
    pub layers: Vec<LayerGrad>,
    pub loss: f64,
}

impl GradientBundle {
    pub fn zeros_like(net: &DenseNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    biases: vec![0.0; l.biases.len()],
                })
                .collect(),
            loss: 0.0,
        }
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn is_finite(&self) -> bool {
        self.loss.is_finite() && self.values().all(|g| g.is_finite())
    }

    fn matches(&self, net: &DenseNet) -> Result<()> {
        check_len("gradient layers", net.layers.len(), self.layers.len())?;
        for (g, l) in self.layers.iter().zip(&net.layers) {
            check_len("weight gradient", l.weights.len(), g.weights.len())?;
            check_len("bias gradient", l.biases.len(), g.biases.len())?;
        }
        Ok(())
    }
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first: Vec<LayerGrad>,
    second: Vec<LayerGrad>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(net: &DenseNet) -> Self {
        Self::with_constants(net, ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }

    pub fn with_constants(net: &DenseNet, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = GradientBundle::zeros_like(net).layers;
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One Adam update with decoupled weight decay (`θ ← θ(1 − lr·wd)` before the
/// moment step).
pub fn adam_step(
    net: &mut DenseNet,
    state: &mut AdamState,
    grads: &GradientBundle,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    grads.matches(net)?;
    check_len("adam state layers", net.layers.len(), state.first.len())?;
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(AsmError::config(format!(
            "learning rate must be non-negative, got {lr}"
        )));
    }
    if !grads.is_finite() {
        return Err(AsmError::NumericFault(
            "non-finite gradient entry".to_string(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let shrink = 1.0 - lr * weight_decay;

    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..theta.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            theta[i] = theta[i] * shrink - lr * m_hat / (v_hat.sqrt() + eps);
        }
    };

    for (li, layer) in net.layers.iter_mut().enumerate() {
        let g = &grads.layers[li];
        let (m, v) = (&mut state.first[li], &mut state.second[li]);
        update(
            &mut layer.weights,
            &g.weights,
            &mut m.weights,
            &mut v.weights,
        );
        update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
    }
    Ok(())
}
