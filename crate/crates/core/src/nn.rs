//! A small fully-connected network with hand-written gradients and Adam.
//!
//! Hidden layers use ReLU, the output layer is linear. All parameters live
//! in one flat `Vec<f64>`; layer `l` stores its `out x in` weight matrix in
//! row-major order followed by its `out` biases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, logsumexp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Seeded init, every parameter uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new(sizes: &[usize], seed: u64) -> Result<Self> {
        Self::check_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = 1.0 / (w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        Self::check_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        Self::check_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                param_count(sizes),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::domain("non-finite parameter"));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params,
        })
    }

    fn check_sizes(sizes: &[usize]) -> Result<()> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::domain("an MLP needs input and output sizes, all positive"));
        }
        Ok(())
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

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// `self <- (1 - tau) * self + tau * other`.
    pub fn polyak_from(&mut self, other: &Mlp, tau: f64) {
        debug_assert_eq!(self.sizes, other.sizes);
        for (p, q) in self.params.iter_mut().zip(&other.params) {
            *p = (1.0 - tau) * *p + tau * q;
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::domain(format!(
                "input has dimension {}, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(self.activations(x).pop().unwrap())
    }

    /// Layer outputs, starting with the input itself. Hidden entries are
    /// post-ReLU, the last entry is the linear output.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + n_in * n_out];
            let biases = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out: Vec<f64> = weights
                .chunks_exact(n_in)
                .zip(biases)
                .map(|(row, b)| row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>() + b)
                .collect();
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(out);
            offset += n_in * n_out + n_out;
        }
        acts
    }

    /// Add `d(upstream · logits)/dθ` at input `x` into `grad`.
    pub fn accumulate_gradient(&self, x: &[f64], upstream: &[f64], grad: &mut [f64]) {
        debug_assert_eq!(upstream.len(), self.output_dim());
        debug_assert_eq!(grad.len(), self.params.len());
        let acts = self.activations(x);
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        let mut delta = upstream.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &acts[l];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                row.iter_mut().zip(input).for_each(|(g, v)| *g += d * v);
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let weights = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    weights[o * n_in..(o + 1) * n_in]
                        .iter()
                        .zip(prev.iter_mut())
                        .for_each(|(w, p)| *p += w * d);
                }
                // ReLU gate: hidden output was clamped at zero.
                prev.iter_mut().zip(input).for_each(|(p, &a)| {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                });
                delta = prev;
            }
        }
    }

    /// Parameter gradients summed over a batch of `(input, d loss / d logits)`.
    pub fn backward(&self, batch: &[(Vec<f64>, Vec<f64>)]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        for (x, upstream) in batch {
            self.accumulate_gradient(x, upstream, &mut grad);
        }
        grad
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One bias-corrected Adam update in place.
    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        debug_assert_eq!(params.len(), self.m.len());
        debug_assert_eq!(grads.len(), self.m.len());
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// `-log softmax(logits)[target]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < logits.len());
    let log_probs = log_softmax(logits);
    let mut grad: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
    grad[target] -= 1.0;
    (-log_probs[target], grad)
}

/// Cross-entropy against a target distribution, `-Σ y log softmax(logits)`,
/// with gradient `softmax - y`.
pub fn soft_cross_entropy(logits: &[f64], target: &[f64]) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), target.len());
    let lse = logsumexp(logits);
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(target)
        .map(|(&l, &y)| {
            if y > 0.0 {
                loss -= y * (l - lse);
            }
            (l - lse).exp() - y
        })
        .collect();
    (loss, grad)
}

/// Asymmetric squared loss `|tau - 1{u < 0}| u^2` with `u = target - pred`,
/// and its gradient with respect to `pred`.
pub fn expectile_loss(pred: f64, target: f64, tau: f64) -> (f64, f64) {
    let u = target - pred;
    let weight = if u < 0.0 { 1.0 - tau } else { tau };
    (weight * u * u, -2.0 * weight * u)
}
