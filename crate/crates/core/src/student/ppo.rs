use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::policy::{log_softmax, HeadKind, StudentPolicy, LOG_STD_MAX, LOG_STD_MIN};
use super::{compute_gae, RolloutBatch};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Adam};
use crate::rng::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;
const ADV_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub epochs: usize,
    pub minibatches: usize,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub max_grad_norm: f64,
    pub rollout_len: usize,
    pub hidden: [usize; 2],
    pub gamma: f64,
    pub gae_lambda: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            minibatches: 5,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            policy_lr: 1e-3,
            value_lr: 1e-3,
            max_grad_norm: 0.5,
            rollout_len: 250,
            hidden: [64, 64],
            gamma: 0.999,
            gae_lambda: 0.95,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    /// Gradient steps taken per rollout.
    pub fn updates_per_env(&self) -> usize {
        self.epochs * self.minibatches
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("ppo: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.minibatches == 0 {
            return bad("minibatches must be at least 1");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip ratio must lie in (0, 1)");
        }
        if self.rollout_len < self.minibatches {
            return bad("rollout_len must be at least the number of minibatches");
        }
        if !(self.policy_lr > 0.0 && self.value_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gamma and gae_lambda must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Training tensors for one gradient step.
#[derive(Debug, Clone, Default)]
pub struct Minibatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.returns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.returns.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoMetrics {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub updates: usize,
    pub regret_proxy: f64,
}

/// Total loss `-surrogate + c_v * value_mse - c_e * entropy` on `mb` and its
/// gradient laid out like [`StudentPolicy::flat_params`].
pub fn ppo_loss_and_grad(policy: &StudentPolicy, mb: &Minibatch, config: &PpoConfig) -> (LossParts, Vec<f64>) {
    let n = mb.len();
    assert!(n > 0, "empty minibatch");
    let inv_n = 1.0 / n as f64;
    let np = policy.policy.num_params();
    let ns = policy.log_std.len();
    let mut grad = vec![0.0; policy.num_params()];
    let mut parts = LossParts::default();
    let eps = config.clip;

    for i in 0..n {
        let obs = &mb.observations[i];
        let (out, tape) = policy.policy.forward_tape(obs);
        let mut g_out = vec![0.0; out.len()];

        let (logp, d_logp_out, entropy, d_ent_out, d_logp_std, d_ent_std) = match policy.shape.head {
            HeadKind::Categorical { .. } => {
                let a = mb.actions[i][0] as usize;
                let ls = log_softmax(&out);
                let p: Vec<f64> = ls.iter().map(|l| l.exp()).collect();
                let h: f64 = -p.iter().zip(&ls).map(|(p, l)| p * l).sum::<f64>();
                let d_logp: Vec<f64> = (0..out.len()).map(|j| (j == a) as u8 as f64 - p[j]).collect();
                let d_ent: Vec<f64> = (0..out.len()).map(|j| -p[j] * (ls[j] + h)).collect();
                (ls[a], d_logp, h, d_ent, vec![], vec![])
            }
            HeadKind::SquashedGaussian { .. } => {
                let u = &mb.actions[i];
                let logp = policy.gaussian_log_prob(&out, u);
                let mut d_logp = vec![0.0; out.len()];
                let mut d_std = vec![0.0; ns];
                let mut d_ent_std = vec![0.0; ns];
                let mut h = 0.0;
                for j in 0..out.len() {
                    let raw = policy.log_std[j];
                    let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                    let inside = (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw) as u8 as f64;
                    let s = ls.exp();
                    let z = (u[j] - out[j]) / s;
                    d_logp[j] = z / s;
                    d_std[j] = (z * z - 1.0) * inside;
                    d_ent_std[j] = inside;
                    h += ls + 0.5 + HALF_LN_2PI;
                }
                (logp, d_logp, h, vec![0.0; out.len()], d_std, d_ent_std)
            }
        };

        let adv = mb.advantages[i];
        let ratio = (logp - mb.old_log_probs[i]).exp();
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - eps, 1.0 + eps) * adv;
        let surr = unclipped.min(clipped);
        let clip_active = clipped < unclipped;
        // d(-surr)/d logp, zero when the clipped branch is selected
        let d_loss_logp = if clip_active { 0.0 } else { -ratio * adv * inv_n };
        if clip_active {
            parts.clip_fraction += inv_n;
        }
        parts.policy -= surr * inv_n;
        parts.entropy += entropy * inv_n;

        let ce = config.entropy_coef;
        for j in 0..out.len() {
            g_out[j] = d_loss_logp * d_logp_out[j] - ce * inv_n * d_ent_out[j];
        }
        for j in 0..ns {
            grad[np + j] += d_loss_logp * d_logp_std[j] - ce * inv_n * d_ent_std[j];
        }
        policy.policy.backward(&tape, &g_out, &mut grad[..np]);

        let (v, vtape) = policy.value.forward_tape(obs);
        let diff = v[0] - mb.returns[i];
        parts.value += diff * diff * inv_n;
        let g_v = [2.0 * config.value_coef * diff * inv_n];
        policy.value.backward(&vtape, &g_v, &mut grad[np + ns..]);
    }
    parts.total = parts.policy + config.value_coef * parts.value - config.entropy_coef * parts.entropy;
    (parts, grad)
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in xs {
        *x = (*x - mean) / (sd + ADV_EPS);
    }
}

/// Runs `epochs x minibatches` clipped-surrogate steps on `batch`.
pub fn ppo_update(
    policy: &mut StudentPolicy,
    batch: &RolloutBatch,
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<PpoMetrics> {
    let n = batch.len();
    if n < config.minibatches {
        return Err(Error::Config(format!(
            "batch of {n} steps cannot fill {} minibatches",
            config.minibatches
        )));
    }
    let (adv, returns) = compute_gae(batch, policy.gamma, policy.gae_lambda);
    let regret_proxy = returns
        .iter()
        .zip(&batch.values)
        .map(|(r, v)| (r - v).max(0.0))
        .sum::<f64>()
        / n as f64;

    let np = policy.policy.num_params() + policy.log_std.len();
    let nv = policy.value.num_params();
    if policy.optim.is_none() {
        policy.optim = Some((Adam::new(np, config.policy_lr), Adam::new(nv, config.value_lr)));
    }

    let mut metrics = PpoMetrics {
        regret_proxy,
        ..PpoMetrics::default()
    };
    let mut order: Vec<usize> = (0..n).collect();
    let mut step = 0;
    for _ in 0..config.epochs {
        order.shuffle(rng);
        for chunk in 0..config.minibatches {
            let lo = chunk * n / config.minibatches;
            let hi = (chunk + 1) * n / config.minibatches;
            let idx = &order[lo..hi];
            let mut mb = Minibatch {
                observations: idx.iter().map(|&i| batch.observations[i].clone()).collect(),
                actions: idx.iter().map(|&i| batch.actions[i].clone()).collect(),
                old_log_probs: idx.iter().map(|&i| batch.log_probs[i]).collect(),
                advantages: idx.iter().map(|&i| adv[i]).collect(),
                returns: idx.iter().map(|&i| returns[i]).collect(),
            };
            if config.normalize_advantages && mb.len() > 1 {
                normalize(&mut mb.advantages);
            }
            let (parts, mut grad) = ppo_loss_and_grad(policy, &mb, config);
            if !parts.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::TrainingDiverged {
                    minibatch: step,
                    what: format!("loss {}", parts.total),
                });
            }
            let (pg, vg) = grad.split_at_mut(np);
            clip_grad_norm(pg, config.max_grad_norm);
            clip_grad_norm(vg, config.max_grad_norm);

            let mut flat = policy.flat_params();
            let (pp, vp) = flat.split_at_mut(np);
            let (pa, va) = policy.optim.as_mut().unwrap();
            pa.step(pp, pg);
            va.step(vp, vg);
            policy.set_flat_params(&flat);
            if !policy.is_finite() {
                return Err(Error::TrainingDiverged {
                    minibatch: step,
                    what: "non-finite weights".into(),
                });
            }

            metrics.policy_loss += parts.policy;
            metrics.value_loss += parts.value;
            metrics.entropy += parts.entropy;
            metrics.clip_fraction += parts.clip_fraction;
            metrics.updates += 1;
            step += 1;
        }
    }
    let k = metrics.updates as f64;
    metrics.policy_loss /= k;
    metrics.value_loss /= k;
    metrics.entropy /= k;
    metrics.clip_fraction /= k;
    Ok(metrics)
}
