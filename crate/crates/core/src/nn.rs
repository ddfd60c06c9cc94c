//! Small dense networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat `Vec<f64>` so optimizers, soft target updates,
//! checkpoints and finite-difference checks all work on plain slices.
//! Layer `l` occupies `W_l` (out x in, row-major) followed by `b_l`.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Silu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Silu => x / (1.0 + (-x).exp()),
        }
    }

    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-pre).exp());
                s * (1.0 + pre * (1.0 - s))
            }
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
            Activation::Silu => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Silu),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, consumed by `backward`.
#[derive(Debug, Clone)]
pub struct Tape {
    // inputs[l] feeds layer l; pre[l] is layer l's affine output
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], hidden: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            hidden,
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Xavier-uniform weights, zero biases; the last layer is scaled by `out_scale`.
    pub fn new(sizes: &[usize], hidden: Activation, out_scale: f64, rng: &mut Rng) -> Self {
        let mut net = Self::zeros(sizes, hidden);
        let n_layers = sizes.len() - 1;
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == n_layers {
                bound *= out_scale;
            }
            for w in &mut net.params[off..off + fan_in * fan_out] {
                *w = rng.random_range(-bound..=bound);
            }
            off += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, hidden: Activation, params: Vec<f64>) -> Option<Self> {
        (sizes.len() >= 2 && params.len() == param_count(&sizes)).then_some(Self {
            sizes,
            hidden,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden(&self) -> Activation {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut next = b.to_vec();
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                next[o] += row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>();
            }
            if l + 1 < n_layers {
                for v in &mut next {
                    *v = self.hidden.apply(*v);
                }
            }
            cur = next;
            off += n_in * n_out + n_out;
        }
        cur
    }

    pub fn forward_tape(&self, x: &[f64]) -> (Vec<f64>, Tape) {
        debug_assert_eq!(x.len(), self.input_dim());
        let n_layers = self.sizes.len() - 1;
        let mut tape = Tape {
            inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers),
        };
        let mut cur = x.to_vec();
        let mut off = 0;
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let mut pre = b.to_vec();
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                pre[o] += row.iter().zip(&cur).map(|(a, c)| a * c).sum::<f64>();
            }
            let next = if l + 1 < n_layers {
                pre.iter().map(|&v| self.hidden.apply(v)).collect()
            } else {
                pre.clone()
            };
            tape.inputs.push(std::mem::replace(&mut cur, next));
            tape.pre.push(pre);
            off += n_in * n_out + n_out;
        }
        (cur, tape)
    }

    /// Accumulates dL/dparams into `grad` and returns dL/dinput.
    pub fn backward(&self, tape: &Tape, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        let n_layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &tape.inputs[l];
            {
                let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    if d != 0.0 {
                        for (g, x) in gw[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
                            *g += d * x;
                        }
                    }
                }
            }
            let w = &self.params[off..off + n_in * n_out];
            let mut grad_in = vec![0.0; n_in];
            for (o, row) in w.chunks_exact(n_in).enumerate() {
                let d = delta[o];
                if d != 0.0 {
                    for (gi, wv) in grad_in.iter_mut().zip(row) {
                        *gi += d * wv;
                    }
                }
            }
            if l > 0 {
                let pre = &tape.pre[l - 1];
                for (i, g) in grad_in.iter_mut().enumerate() {
                    *g *= self.hidden.derivative(pre[i], input[i]);
                }
            }
            delta = grad_in;
        }
        delta
    }

    /// `self <- tau * online + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, online: &Mlp, tau: f64) {
        debug_assert_eq!(self.params.len(), online.params.len());
        for (t, o) in self.params.iter_mut().zip(&online.params) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` in place so its L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
