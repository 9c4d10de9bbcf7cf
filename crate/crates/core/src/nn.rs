//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Batches are row-major `batch × features`. Weights are stored `inputs × outputs`
//! so a layer is `Z = X·W + b`. Hidden layers use ReLU; the output head is either
//! linear (critic) or a tanh squashed into an action interval (actor).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputHead {
    Linear,
    /// `min + (tanh(u) + 1) / 2 · (max − min)`.
    ScaledTanh { min: f64, max: f64 },
}

impl OutputHead {
    fn apply(&self, u: f64) -> f64 {
        match *self {
            OutputHead::Linear => u,
            OutputHead::ScaledTanh { min, max } => min + 0.5 * (u.tanh() + 1.0) * (max - min),
        }
    }

    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            OutputHead::Linear => 1.0,
            OutputHead::ScaledTanh { min, max } => {
                let t = u.tanh();
                0.5 * (1.0 - t * t) * (max - min)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `inputs × outputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    /// Uniform fan-in initialisation `U(±scale/√inputs)` for weights and biases.
    pub fn fan_in<R: Rng + ?Sized>(inputs: usize, outputs: usize, scale: f64, rng: &mut R) -> Self {
        let bound = scale / (inputs as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| draw()).collect(),
            biases: (0..outputs).map(|_| draw()).collect(),
        }
    }
}

/// `c = a·b + beta·c` for row-major/strided operands.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(a.len() > (m.max(1) - 1) * rsa + (k.max(1) - 1) * csa || m * k == 0);
    debug_assert!(b.len() > (k.max(1) - 1) * rsb + (n.max(1) - 1) * csb || k * n == 0);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: bounds of every operand are checked above for the given strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Cached activations of one batched forward pass.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    batch: usize,
    /// Input to each layer (post-activation of the previous one).
    layer_inputs: Vec<Vec<f64>>,
    /// Final pre-head values `u`.
    pre_head: Vec<f64>,
    output: Vec<f64>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn pre_head(&self) -> &[f64] {
        &self.pre_head
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn is_empty(&self) -> bool {
        self.layer_inputs.is_empty()
    }
}

/// Per-layer parameter gradients, shaped like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()).copied())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Dense>,
    head: OutputHead,
}

impl DenseNet {
    pub fn from_layers(layers: Vec<Dense>, head: OutputHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Dimension {
                    expected: w[0].outputs,
                    got: w[1].inputs,
                });
            }
        }
        for l in &layers {
            if l.weights.len() != l.inputs * l.outputs || l.biases.len() != l.outputs {
                return Err(Error::InvalidConfig("layer parameter shape mismatch".into()));
            }
        }
        Ok(Self { layers, head })
    }

    pub fn zeros(sizes: &[usize], head: OutputHead) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig("need at least input and output sizes".into()));
        }
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self::from_layers(layers, head)
    }

    /// Fan-in initialisation; the last layer is further scaled by `final_scale`.
    pub fn random<R: Rng + ?Sized>(
        sizes: &[usize],
        head: OutputHead,
        final_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidConfig("need at least input and output sizes".into()));
        }
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let scale = if i == last { final_scale } else { 1.0 };
                Dense::fan_in(w[0], w[1], scale, rng)
            })
            .collect();
        Self::from_layers(layers, head)
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn head(&self) -> OutputHead {
        self.head
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.biases.iter()).copied())
    }

    /// Mutable access to the `idx`-th parameter in [`DenseNet::params`] order.
    pub fn param_mut(&mut self, mut idx: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                return Some(&mut l.weights[idx]);
            }
            idx -= l.weights.len();
            if idx < l.biases.len() {
                return Some(&mut l.biases[idx]);
            }
            idx -= l.biases.len();
        }
        None
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(f64::is_finite)
    }

    fn check_input(&self, input: &[f64], batch: usize) -> Result<()> {
        let expected = batch * self.input_dim();
        if batch == 0 {
            return Err(Error::EmptyBatch);
        }
        if input.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: input.len(),
            });
        }
        Ok(())
    }

    fn affine(layer: &Dense, x: &[f64], batch: usize) -> Vec<f64> {
        let mut z = Vec::with_capacity(batch * layer.outputs);
        for _ in 0..batch {
            z.extend_from_slice(&layer.biases);
        }
        gemm(
            batch,
            layer.inputs,
            layer.outputs,
            x,
            (layer.inputs, 1),
            &layer.weights,
            (layer.outputs, 1),
            1.0,
            &mut z,
        );
        z
    }

    /// Batched inference without caching.
    pub fn forward(&self, input: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_input(input, batch)?;
        let last = self.layers.len() - 1;
        let mut x = Self::affine(&self.layers[0], input, batch);
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                x = Self::affine(layer, &x, batch);
            }
            if i < last {
                x.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
        x.iter_mut().for_each(|v| *v = self.head.apply(*v));
        Ok(x)
    }

    /// Forward pass on a single sample.
    pub fn forward_one(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.forward(input, 1)
    }

    /// Batched forward pass that keeps what [`DenseNet::backward`] needs.
    pub fn forward_tape(&self, input: &[f64], batch: usize) -> Result<Tape> {
        self.check_input(input, batch)?;
        let last = self.layers.len() - 1;
        let mut layer_inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Self::affine(layer, &x, batch);
            layer_inputs.push(x);
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            x = z;
        }
        let output = x.iter().map(|&u| self.head.apply(u)).collect();
        Ok(Tape {
            batch,
            layer_inputs,
            pre_head: x,
            output,
        })
    }

    /// Reverse-mode pass: parameter gradients and the gradient w.r.t. the input,
    /// given `upstream = ∂L/∂output` (shape `batch × out`).
    pub fn backward(&self, tape: &Tape, upstream: &[f64]) -> Result<(Gradients, Vec<f64>)> {
        if tape.is_empty() {
            return Err(Error::NoForwardCache);
        }
        if tape.layer_inputs.len() != self.layers.len() {
            return Err(Error::ArchitectureMismatch);
        }
        let batch = tape.batch;
        let expected = batch * self.output_dim();
        if upstream.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: upstream.len(),
            });
        }
        let dz: Vec<f64> = upstream
            .iter()
            .zip(&tape.pre_head)
            .map(|(g, &u)| g * self.head.derivative(u))
            .collect();
        self.backward_pre_head(tape, dz)
    }

    /// Like [`DenseNet::backward`] but with the gradient already taken with
    /// respect to the pre-head values `u`.
    pub fn backward_pre_head(&self, tape: &Tape, mut dz: Vec<f64>) -> Result<(Gradients, Vec<f64>)> {
        if tape.is_empty() {
            return Err(Error::NoForwardCache);
        }
        if tape.layer_inputs.len() != self.layers.len() {
            return Err(Error::ArchitectureMismatch);
        }
        let batch = tape.batch;
        let expected = batch * self.output_dim();
        if dz.len() != expected {
            return Err(Error::Dimension {
                expected,
                got: dz.len(),
            });
        }
        let n = self.layers.len();
        let mut dw = vec![Vec::new(); n];
        let mut db = vec![Vec::new(); n];
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let x = &tape.layer_inputs[i];
            let (fan_in, fan_out) = (layer.inputs, layer.outputs);

            let mut gw = vec![0.0; fan_in * fan_out];
            gemm(fan_in, batch, fan_out, x, (1, fan_in), &dz, (fan_out, 1), 0.0, &mut gw);
            let mut gb = vec![0.0; fan_out];
            for row in dz.chunks_exact(fan_out) {
                for (acc, g) in gb.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            dw[i] = gw;
            db[i] = gb;

            let mut dx = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &dz, (fan_out, 1), &layer.weights, (1, fan_out), 0.0, &mut dx);
            if i > 0 {
                // ReLU of the previous layer: its output is this layer's input.
                for (g, &a) in dx.iter_mut().zip(x) {
                    if a <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            dz = dx;
        }
        Ok((
            Gradients {
                weights: dw,
                biases: db,
            },
            dz,
        ))
    }

    /// `θ ← τ·θ_source + (1 − τ)·θ`.
    pub fn soft_update(&mut self, source: &DenseNet, tau: f64) -> Result<()> {
        if self.layer_sizes() != source.layer_sizes() {
            return Err(Error::ArchitectureMismatch);
        }
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            for (d, s) in dst.weights.iter_mut().zip(&src.weights) {
                *d = tau * s + (1.0 - tau) * *d;
            }
            for (d, s) in dst.biases.iter_mut().zip(&src.biases) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }
}

/// Adaptive moment estimation with bias correction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        let shapes: Vec<Vec<f64>> = net
            .layers
            .iter()
            .flat_map(|l| [vec![0.0; l.weights.len()], vec![0.0; l.biases.len()]])
            .collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One descent step along `grads`.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<()> {
        if grads.weights.len() != net.layers.len() || self.m.len() != 2 * net.layers.len() {
            return Err(Error::ArchitectureMismatch);
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let step = self.lr * c2.sqrt() / c1;
        let eps_hat = self.eps * c2.sqrt();
        let (b1, b2) = (self.beta1, self.beta2);
        for (li, layer) in net.layers.iter_mut().enumerate() {
            let pairs = [
                (&mut layer.weights, &grads.weights[li]),
                (&mut layer.biases, &grads.biases[li]),
            ];
            for (k, (params, g)) in pairs.into_iter().enumerate() {
                if params.len() != g.len() {
                    return Err(Error::ArchitectureMismatch);
                }
                let slot = 2 * li + k;
                let (m, v) = (&mut self.m[slot], &mut self.v[slot]);
                for (((p, &gi), mi), vi) in params.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi = b1 * *mi + (1.0 - b1) * gi;
                    *vi = b2 * *vi + (1.0 - b2) * gi * gi;
                    *p -= step * *mi / (vi.sqrt() + eps_hat);
                }
            }
        }
        Ok(())
    }
}
