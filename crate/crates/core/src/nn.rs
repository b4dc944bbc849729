//! Dense feed-forward networks with a single sigmoid output, trained by
//! full-batch Adam on (weighted) binary cross-entropy.
//!
//! Parameters live in one flat vector. Layer `l` stores its weights row-major
//! (`out x in`) followed by its biases.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sigmoid, PROB_EPS};

#[inline]
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and activation.
    #[inline]
    fn grad(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// All-zero network: every output is exactly 0.5.
    pub fn zeros(input: usize, hidden: &[usize], activation: Activation) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let n = param_count(&sizes);
        Self { sizes, activation, params: vec![0.0; n] }
    }

    /// Uniform fan-in initialization, zero biases.
    pub fn random<R: Rng>(input: usize, hidden: &[usize], activation: Activation, rng: &mut R) -> Self {
        let mut net = Self::zeros(input, hidden, activation);
        let mut offset = 0;
        for w in net.sizes.clone().windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = match activation {
                Activation::Relu => (6.0 / fan_in.max(1) as f64).sqrt(),
                Activation::Tanh => (6.0 / (fan_in + fan_out) as f64).sqrt(),
            };
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || *sizes.last().unwrap() != 1 {
            return Err(Error::Schema(format!("invalid layer sizes {sizes:?}")));
        }
        if params.len() != param_count(&sizes) {
            return Err(Error::Schema(format!(
                "expected {} parameters, found {}",
                param_count(&sizes),
                params.len()
            )));
        }
        Ok(Self { sizes, activation, params })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Output pre-activation.
    pub fn logit(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.input_dim());
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let mut offset = 0;
        let last = self.sizes.len() - 2;
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (n_in, n_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            next.clear();
            for o in 0..n_out {
                let row = &weights[o * n_in..(o + 1) * n_in];
                let z = biases[o] + row.iter().zip(&cur).map(|(a, b)| a * b).sum::<f64>();
                next.push(if l == last { z } else { self.activation.apply(z) });
            }
            std::mem::swap(&mut cur, &mut next);
            offset += n_in * n_out + n_out;
        }
        cur[0]
    }

    /// Clamped output probability.
    pub fn prob(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x)).clamp(PROB_EPS, 1.0 - PROB_EPS)
    }

    /// Weighted BCE `sum_i w_i * bce(y_i, p_i)` and its parameter gradient.
    ///
    /// Evaluated from the logit as `softplus(z) - y z`, which stays finite
    /// and keeps a gradient however saturated the output is.
    pub fn weighted_bce(&self, batch: &Batch) -> (f64, Vec<f64>) {
        let mut grad = vec![0.0; self.params.len()];
        let n_layers = self.sizes.len() - 1;
        let mut pre: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        let mut post: Vec<Vec<f64>> = self.sizes[1..].iter().map(|&n| vec![0.0; n]).collect();
        let max_width = *self.sizes.iter().max().unwrap();
        let mut delta = vec![0.0; max_width];
        let mut delta_prev = vec![0.0; max_width];
        let offsets: Vec<usize> = self
            .sizes
            .windows(2)
            .scan(0, |acc, w| {
                let o = *acc;
                *acc += w[0] * w[1] + w[1];
                Some(o)
            })
            .collect();

        let mut loss = 0.0;
        for i in 0..batch.len() {
            let x = batch.input(i);
            let (y, wt) = (batch.targets[i], batch.weights[i]);
            if wt == 0.0 {
                continue;
            }
            // forward
            for l in 0..n_layers {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let weights = &self.params[offsets[l]..offsets[l] + n_in * n_out];
                let biases = &self.params[offsets[l] + n_in * n_out..offsets[l] + n_in * n_out + n_out];
                let (before, after) = post.split_at_mut(l);
                let input: &[f64] = if l == 0 { x } else { &before[l - 1] };
                for o in 0..n_out {
                    let row = &weights[o * n_in..(o + 1) * n_in];
                    let z = biases[o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                    pre[l][o] = z;
                    after[0][o] = if l + 1 == n_layers { z } else { self.activation.apply(z) };
                }
            }
            let z = post[n_layers - 1][0];
            loss += wt * (softplus(z) - y * z);
            let dz = wt * (sigmoid(z) - y);
            if dz == 0.0 {
                continue;
            }
            // backward
            delta[0] = dz;
            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
                let input: &[f64] = if l == 0 { x } else { &post[l - 1] };
                let w_off = offsets[l];
                let b_off = w_off + n_in * n_out;
                for o in 0..n_out {
                    let d = delta[o];
                    grad[b_off + o] += d;
                    let g_row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, a) in g_row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                }
                if l > 0 {
                    let weights = &self.params[w_off..w_off + n_in * n_out];
                    for j in 0..n_in {
                        let mut s = 0.0;
                        for o in 0..n_out {
                            s += weights[o * n_in + j] * delta[o];
                        }
                        delta_prev[j] = s * self.activation.grad(pre[l - 1][j], post[l - 1][j]);
                    }
                    std::mem::swap(&mut delta, &mut delta_prev);
                }
            }
        }
        (loss, grad)
    }
}

/// Row-major inputs with per-row soft targets and loss weights.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    dim: usize,
    inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Batch {
    pub fn new(dim: usize) -> Self {
        Self { dim, ..Default::default() }
    }

    pub fn push(&mut self, x: &[f64], target: f64, weight: f64) {
        debug_assert_eq!(x.len(), self.dim);
        self.inputs.extend_from_slice(x);
        self.targets.push(target);
        self.weights.push(weight);
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }
}

/// Adam settings; the default matches full-batch PEM training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, epochs: 300 }
    }
}

impl OptimizerConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimizerConfig,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig, n_params: usize) -> Self {
        Self { cfg, m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t);
        let bc2 = 1.0 - c.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = c.beta1 * self.m[i] + (1.0 - c.beta1) * grad[i];
            self.v[i] = c.beta2 * self.v[i] + (1.0 - c.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitSummary {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
}

/// Full-batch Adam on weighted BCE. Keeps the lowest-loss parameters seen,
/// so the returned loss never exceeds the initial one.
pub fn fit(net: &mut Mlp, batch: &Batch, opt: &OptimizerConfig) -> Result<FitSummary> {
    let mut adam = Adam::new(*opt, net.params.len());
    let (initial_loss, mut grad) = net.weighted_bce(batch);
    if !initial_loss.is_finite() {
        return Err(Error::Training { epoch: 0, loss: initial_loss });
    }
    let mut best = (initial_loss, net.params.clone());
    for epoch in 1..=opt.epochs {
        adam.step(&mut net.params, &grad);
        let (loss, g) = net.weighted_bce(batch);
        if !loss.is_finite() || net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Training { epoch, loss });
        }
        if loss < best.0 {
            best.0 = loss;
            best.1.copy_from_slice(&net.params);
        }
        grad = g;
    }
    net.params = best.1;
    Ok(FitSummary { initial_loss, final_loss: best.0, epochs: opt.epochs })
}

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Fits on rows of `dim` values; constant features get unit deviation.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1;
            for j in 0..dim {
                sum[j] += r[j];
                sq[j] += r[j] * r[j];
            }
        }
        if n == 0 {
            return Self::identity(dim);
        }
        let nf = n as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / nf).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / nf - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.std).map(|((v, m), s)| (v - m) / s).collect()
    }
}
