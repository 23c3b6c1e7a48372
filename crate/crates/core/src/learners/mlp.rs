//! Fully connected regression network trained with Adam on squared error.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LearnerError, MlpParams};
use crate::data::{Dataset, Standardizer};
use crate::rng::{self, StreamRng};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
        }
    }

    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

/// Dense network with a linear scalar output.
///
/// Parameters live in one flat vector: for each layer, the `out x in`
/// weight matrix (row-major) followed by the `out` biases.
#[derive(Debug, Clone)]
pub struct Network {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

impl Network {
    /// Uniform fan-in scaled initialization: `sqrt(6 / fan_in)` for ReLU,
    /// `sqrt(3 / fan_in)` otherwise. Biases start at zero.
    pub fn new(inputs: usize, hidden: &[usize], activation: Activation, rng: &mut StreamRng) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(inputs);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let total: usize = sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum();
        let mut params = Vec::with_capacity(total);
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let gain = if activation == Activation::Relu { 6.0 } else { 3.0 };
            let limit = (gain / fan_in as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self { sizes, activation, params }
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn n_inputs(&self) -> usize {
        self.sizes[0]
    }

    pub fn forward(&self, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            offset += n_in * n_out + n_out;
            a = (0..n_out)
                .map(|j| {
                    let z = biases[j] + dot(&weights[j * n_in..(j + 1) * n_in], &a);
                    if l == last {
                        z
                    } else {
                        self.activation.apply(z)
                    }
                })
                .collect();
        }
        a[0]
    }

    /// Mean squared error over a batch (`xs` row-major).
    pub fn loss(&self, xs: &[f64], ys: &[f64]) -> f64 {
        let d = self.n_inputs();
        xs.chunks_exact(d).zip(ys).map(|(x, y)| (self.forward(x) - y).powi(2)).sum::<f64>()
            / ys.len() as f64
    }

    /// Mean squared error and its gradient by backpropagation. `grad` is
    /// overwritten.
    pub fn loss_and_gradient(&self, xs: &[f64], ys: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let d = self.n_inputs();
        let n_layers = self.sizes.len() - 1;
        let scale = 2.0 / ys.len() as f64;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for w in self.sizes.windows(2) {
            offsets.push(off);
            off += w[0] * w[1] + w[1];
        }

        // pre[l], post[l] are the pre- and post-activation of layer l's outputs
        let mut pre: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&s| vec![0.0; s]).collect();
        let mut post = pre.clone();
        let mut loss = 0.0;

        for (x, &y) in xs.chunks_exact(d).zip(ys) {
            for l in 0..n_layers {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let weights = &self.params[offsets[l]..offsets[l] + n_in * n_out];
                let biases = &self.params[offsets[l] + n_in * n_out..offsets[l] + n_in * n_out + n_out];
                let (done, rest) = post.split_at_mut(l);
                let input: &[f64] = if l == 0 { x } else { &done[l - 1] };
                for j in 0..n_out {
                    let z = biases[j] + dot(&weights[j * n_in..(j + 1) * n_in], input);
                    pre[l][j] = z;
                    rest[0][j] = if l + 1 == n_layers { z } else { self.activation.apply(z) };
                }
            }
            let err = post[n_layers - 1][0] - y;
            loss += err * err;

            let mut delta = vec![scale * err];
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
                let w_off = offsets[l];
                let b_off = w_off + n_in * n_out;
                for j in 0..n_out {
                    let row = &mut grad[w_off + j * n_in..w_off + (j + 1) * n_in];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += delta[j] * v;
                    }
                    grad[b_off + j] += delta[j];
                }
                if l > 0 {
                    let weights = &self.params[w_off..b_off];
                    delta = (0..n_in)
                        .map(|i| {
                            let back: f64 = (0..n_out).map(|j| weights[j * n_in + i] * delta[j]).sum();
                            back * self.activation.derivative(pre[l - 1][i], post[l - 1][i])
                        })
                        .collect();
                }
            }
        }
        loss / ys.len() as f64
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone)]
pub struct Adam {
    learning_rate: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self { learning_rate, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPSILON);
        }
    }
}

/// Trained MLP together with its input and target scaling.
#[derive(Debug, Clone)]
pub struct MlpModel {
    network: Network,
    scaler: Standardizer,
    y_mean: f64,
    y_scale: f64,
    optimizer_steps: u64,
}

impl MlpModel {
    /// Features and targets are z-scored on the training rows; batches are
    /// reshuffled every epoch and the final short batch is kept.
    pub fn fit(train: &Dataset, p: &MlpParams, task_seed: u64) -> Result<Self, LearnerError> {
        let mut rng = rng::stream(p.seed, task_seed);
        let scaler = Standardizer::fit(train);
        let n = train.n_rows();
        let d = train.n_features();
        let xs: Vec<f64> = train.rows().flat_map(|r| scaler.transform(r)).collect();
        let y_mean = train.targets().iter().sum::<f64>() / n as f64;
        let y_var = train.targets().iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n as f64;
        let y_scale = if y_var.sqrt() > 1e-12 { y_var.sqrt() } else { 1.0 };
        let ys: Vec<f64> = train.targets().iter().map(|y| (y - y_mean) / y_scale).collect();

        let hidden = vec![p.nodes_per_layer; p.layers];
        let mut network = Network::new(d, &hidden, p.activation, &mut rng);
        let mut adam = Adam::new(network.params.len(), p.learning_rate);
        let mut grad = vec![0.0; network.params.len()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut bx = Vec::with_capacity(p.batch_size * d);
        let mut by = Vec::with_capacity(p.batch_size);

        for epoch in 0..p.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(p.batch_size) {
                bx.clear();
                by.clear();
                for &i in batch {
                    bx.extend_from_slice(&xs[i * d..(i + 1) * d]);
                    by.push(ys[i]);
                }
                let loss = network.loss_and_gradient(&bx, &by, &mut grad);
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(LearnerError::NonFiniteLoss { epoch });
                }
                adam.step(&mut network.params, &grad);
            }
        }
        if network.params.iter().any(|v| !v.is_finite()) {
            return Err(LearnerError::NonFiniteLoss { epoch: p.epochs - 1 });
        }
        Ok(Self { network, scaler, y_mean, y_scale, optimizer_steps: adam.steps() })
    }

    pub fn n_features(&self) -> usize {
        self.network.n_inputs()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.y_mean + self.y_scale * self.network.forward(&self.scaler.transform(x))
    }

    /// Number of Adam updates performed while fitting.
    pub fn optimizer_steps(&self) -> u64 {
        self.optimizer_steps
    }

    pub fn network(&self) -> &Network {
        &self.network
    }
}
