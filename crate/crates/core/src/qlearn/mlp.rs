//! Fully connected Q-network with hand-written gradients.
//!
//! Parameters live in one flat vector, layer by layer, each layer stored as its
//! weight matrix (row-major, `out x in`) followed by its bias. Gradients and
//! optimizer moments use the same layout, so the optimizer never needs to know
//! the shapes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a batched forward pass for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    batch: usize,
    /// `acts[0]` is the input, `acts[l]` the post-rectifier output of layer `l`;
    /// the last entry holds the raw outputs.
    acts: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn batch(&self) -> usize {
        self.batch
    }
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::usage(format!("invalid layer sizes {sizes:?}")));
        }
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; param_count(sizes)] })
    }

    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weights and biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut off = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            for p in &mut net.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(Error::usage(format!(
                "expected {} parameters for {sizes:?}, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// (weight offset, bias offset) of layer `l`.
    fn offsets(&self, l: usize) -> (usize, usize) {
        let mut off = 0;
        for w in self.sizes.windows(2).take(l) {
            off += w[0] * w[1] + w[1];
        }
        (off, off + self.sizes[l] * self.sizes[l + 1])
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_batch(x, 1)?.acts.pop().unwrap())
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        if x.len() != batch * self.input_dim() {
            return Err(Error::usage(format!("input has {} values, expected {batch} x {}", x.len(), self.input_dim())));
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wo, bo) = self.offsets(l);
            let w = &self.params[wo..bo];
            let b = &self.params[bo..bo + n_out];
            let input = &acts[l];
            let mut out = vec![0.0; batch * n_out];
            for (row, o) in input.chunks_exact(n_in).zip(out.chunks_exact_mut(n_out)) {
                for (j, oj) in o.iter_mut().enumerate() {
                    let wj = &w[j * n_in..(j + 1) * n_in];
                    let mut s = b[j];
                    for (a, c) in wj.iter().zip(row) {
                        s += a * c;
                    }
                    *oj = s;
                }
            }
            if l + 1 < layers {
                for v in &mut out {
                    *v = v.max(0.0);
                }
            }
            acts.push(out);
        }
        Ok(ForwardCache { batch, acts })
    }

    /// Backpropagates `grad_out` (dLoss/dOutput, `batch x out`) through the
    /// cached pass and returns dLoss/dParams in the flat layout.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &[f64]) -> Result<Vec<f64>> {
        let batch = cache.batch;
        if grad_out.len() != batch * self.output_dim() || cache.acts.len() != self.sizes.len() {
            return Err(Error::usage("gradient shape does not match the forward pass"));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = grad_out.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let (wo, bo) = self.offsets(l);
            let input = &cache.acts[l];
            {
                let (gw, gb) = grads[wo..bo + n_out].split_at_mut(bo - wo);
                for (d, x) in delta.chunks_exact(n_out).zip(input.chunks_exact(n_in)) {
                    for (j, &dj) in d.iter().enumerate() {
                        if dj == 0.0 {
                            continue;
                        }
                        gb[j] += dj;
                        for (g, xi) in gw[j * n_in..(j + 1) * n_in].iter_mut().zip(x) {
                            *g += dj * xi;
                        }
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &self.params[wo..bo];
            let mut prev = vec![0.0; batch * n_in];
            for ((d, p), a) in delta.chunks_exact(n_out).zip(prev.chunks_exact_mut(n_in)).zip(input.chunks_exact(n_in))
            {
                for (j, &dj) in d.iter().enumerate() {
                    if dj == 0.0 {
                        continue;
                    }
                    for (pi, wji) in p.iter_mut().zip(&w[j * n_in..(j + 1) * n_in]) {
                        *pi += dj * wji;
                    }
                }
                // Rectifier derivative: the cached activation is the post-ReLU value.
                for (pi, ai) in p.iter_mut().zip(a) {
                    if *ai <= 0.0 {
                        *pi = 0.0;
                    }
                }
            }
            delta = prev;
        }
        Ok(grads)
    }
}

/// Mean Huber loss between `Q(s_i, a_i)` and `targets[i]`, with the gradient
/// with respect to the network outputs (non-zero only at the taken actions).
pub fn huber_loss_grad(
    outputs: &[f64],
    n_actions: usize,
    actions: &[usize],
    targets: &[f64],
    delta: f64,
) -> Result<(f64, Vec<f64>)> {
    let batch = actions.len();
    if targets.len() != batch || outputs.len() != batch * n_actions {
        return Err(Error::usage("loss inputs have mismatched shapes"));
    }
    let mut grad = vec![0.0; outputs.len()];
    let mut loss = 0.0;
    let scale = 1.0 / batch as f64;
    for (i, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        if a >= n_actions {
            return Err(Error::usage(format!("action {a} out of range for {n_actions} outputs")));
        }
        let r = outputs[i * n_actions + a] - y;
        if r.abs() <= delta {
            loss += 0.5 * r * r;
            grad[i * n_actions + a] = r * scale;
        } else {
            loss += delta * (r.abs() - 0.5 * delta);
            grad[i * n_actions + a] = delta * r.signum() * scale;
        }
    }
    Ok((loss * scale, grad))
}

/// Mean Huber loss of `net` on a batch, with its parameter gradient.
pub fn loss_and_grad(net: &Mlp, obs: &[f64], actions: &[usize], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    let cache = net.forward_batch(obs, actions.len())?;
    let (loss, g_out) = huber_loss_grad(cache.outputs(), net.output_dim(), actions, targets, 1.0)?;
    Ok((loss, net.backward(&cache, &g_out)?))
}

/// Scales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / (norm + 1e-6);
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let mh = *m / c1;
            let vh = *v / c2;
            *p -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}
