//! Conditional denoising diffusion over teacher transitions.

mod model;

pub use model::{
    gen_synthetic, ActionModel, ActionSource, Normalizer, WorldModel, WorldModelConfig,
};

use std::f64::consts::PI;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp};
use crate::rng::Rng;
use rand::Rng as _;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub k: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

/// Variance-preserving schedule `beta_k = 1 - exp(bmin/K - (bmax-bmin)(2k-1)/(2K^2))`.
pub fn make_schedule(k: usize, beta_min: f64, beta_max: f64) -> Result<DiffusionSchedule> {
    if k == 0 {
        return Err(Error::InvalidSchedule("K must be at least 1".into()));
    }
    if !(beta_min > 0.0 && beta_min < beta_max && beta_max.is_finite()) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_min < beta_max, got {beta_min} and {beta_max}"
        )));
    }
    let kf = k as f64;
    let betas: Vec<f64> = (1..=k)
        .map(|i| {
            let e = beta_min / kf - 0.5 * (beta_max - beta_min) * (2 * i - 1) as f64 / (kf * kf);
            -e.exp_m1()
        })
        .collect();
    if let Some((i, b)) = betas.iter().enumerate().find(|(_, b)| !(**b > 0.0 && **b < 1.0)) {
        return Err(Error::InvalidSchedule(format!("beta_{} = {b} lies outside (0, 1)", i + 1)));
    }
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(k);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(DiffusionSchedule {
        k,
        beta_min,
        beta_max,
        betas,
        alphas,
        alpha_bars,
    })
}

impl DiffusionSchedule {
    pub fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alphas[k - 1]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bars[k - 1]
    }
}

/// Closed-form draw from the forward chain at step `k`.
pub fn forward_sample(x0: &[f64], k: usize, eps: &[f64], schedule: &DiffusionSchedule) -> Vec<f64> {
    assert!((1..=schedule.k).contains(&k), "diffusion step out of range");
    assert_eq!(x0.len(), eps.len());
    let ab = schedule.alpha_bar(k);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x0.iter().zip(eps).map(|(x, e)| a * x + b * e).collect()
}

pub fn standard_normal(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Noise predictor over `(x_k, condition, k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonNet {
    pub mlp: Mlp,
    pub target_dim: usize,
    pub cond_dim: usize,
    pub k_max: usize,
}

/// The action model reuses the same network with the state as condition.
pub type ActionEpsilonNet = EpsilonNet;

const EMBED_DIM: usize = 3;

impl EpsilonNet {
    pub fn new(target_dim: usize, cond_dim: usize, k_max: usize, hidden: [usize; 2], rng: &mut Rng) -> Self {
        let sizes = [target_dim + cond_dim + EMBED_DIM, hidden[0], hidden[1], target_dim];
        Self {
            mlp: Mlp::new(&sizes, Activation::Silu, 1.0, rng),
            target_dim,
            cond_dim,
            k_max,
        }
    }

    pub fn from_mlp(mlp: Mlp, target_dim: usize, cond_dim: usize, k_max: usize) -> Result<Self> {
        if mlp.input_dim() != target_dim + cond_dim + EMBED_DIM || mlp.output_dim() != target_dim {
            return Err(Error::Shape {
                expected: target_dim + cond_dim + EMBED_DIM,
                got: mlp.input_dim(),
            });
        }
        Ok(Self {
            mlp,
            target_dim,
            cond_dim,
            k_max,
        })
    }

    pub fn input(&self, x_k: &[f64], cond: &[f64], k: usize) -> Vec<f64> {
        debug_assert_eq!(x_k.len(), self.target_dim);
        debug_assert_eq!(cond.len(), self.cond_dim);
        let t = k as f64 / self.k_max as f64;
        let mut v = Vec::with_capacity(self.mlp.input_dim());
        v.extend_from_slice(x_k);
        v.extend_from_slice(cond);
        v.extend_from_slice(&[t, (PI * t).sin(), (PI * t).cos()]);
        v
    }

    pub fn predict(&self, x_k: &[f64], cond: &[f64], k: usize) -> Vec<f64> {
        self.mlp.forward(&self.input(x_k, cond, k))
    }
}

/// One noising draw for a training item.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseDraw {
    pub k: usize,
    pub eps: Vec<f64>,
}

/// A conditioning vector and the clean target it should produce.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionItem {
    pub cond: Vec<f64>,
    pub x0: Vec<f64>,
}

pub fn draw_noise(items: &[DiffusionItem], schedule: &DiffusionSchedule, rng: &mut Rng) -> Vec<NoiseDraw> {
    items
        .iter()
        .map(|it| NoiseDraw {
            k: rng.random_range(1..=schedule.k),
            eps: standard_normal(it.x0.len(), rng),
        })
        .collect()
}

/// Mean `||eps - eps_hat||^2` for fixed draws, with its parameter gradient.
pub fn diffusion_loss_with(
    net: &EpsilonNet,
    items: &[DiffusionItem],
    draws: &[NoiseDraw],
    schedule: &DiffusionSchedule,
) -> (f64, Vec<f64>) {
    assert!(!items.is_empty(), "empty diffusion batch");
    let inv_n = 1.0 / items.len() as f64;
    let mut grad = vec![0.0; net.mlp.num_params()];
    let mut loss = 0.0;
    for (it, d) in items.iter().zip(draws) {
        let x_k = forward_sample(&it.x0, d.k, &d.eps, schedule);
        let (out, tape) = net.mlp.forward_tape(&net.input(&x_k, &it.cond, d.k));
        let g: Vec<f64> = out
            .iter()
            .zip(&d.eps)
            .map(|(o, e)| {
                loss += (e - o) * (e - o) * inv_n;
                2.0 * (o - e) * inv_n
            })
            .collect();
        net.mlp.backward(&tape, &g, &mut grad);
    }
    (loss, grad)
}

pub fn diffusion_loss(
    net: &EpsilonNet,
    items: &[DiffusionItem],
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<(f64, Vec<f64>)> {
    let draws = draw_noise(items, schedule, rng);
    let (loss, grad) = diffusion_loss_with(net, items, &draws, schedule);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged {
            minibatch: 0,
            what: format!("diffusion loss {loss}"),
        });
    }
    Ok((loss, grad))
}

/// `x_{k-1}` from `x_k`; noise-free at `k = 1`.
pub fn reverse_step(
    net: &EpsilonNet,
    x_k: &[f64],
    cond: &[f64],
    k: usize,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Vec<f64> {
    assert!((1..=schedule.k).contains(&k), "diffusion step out of range");
    let eps_hat = net.predict(x_k, cond, k);
    let (b, a, ab) = (schedule.beta(k), schedule.alpha(k), schedule.alpha_bar(k));
    let coef = b / (1.0 - ab).sqrt();
    let inv_sqrt_a = 1.0 / a.sqrt();
    let sd = b.sqrt();
    x_k.iter()
        .zip(&eps_hat)
        .map(|(x, e)| {
            let mean = inv_sqrt_a * (x - coef * e);
            if k > 1 {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            } else {
                mean
            }
        })
        .collect()
}

/// Runs the full reverse chain from standard normal noise.
pub fn sample(net: &EpsilonNet, cond: &[f64], schedule: &DiffusionSchedule, rng: &mut Rng) -> Vec<f64> {
    let mut x = standard_normal(net.target_dim, rng);
    for k in (1..=schedule.k).rev() {
        x = reverse_step(net, &x, cond, k, schedule, rng);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn five_step_schedule_values() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let b1 = 1.0 - (0.02f64 - 0.198).exp();
        let b5 = 1.0 - (0.02f64 - 1.782).exp();
        assert!((s.beta(1) - b1).abs() < 1e-14);
        assert!((s.beta(5) - b5).abs() < 1e-14);
        assert!((s.beta(1) - 0.163_058).abs() < 1e-5);
        assert!((s.beta(5) - 0.828_299).abs() < 1e-5);
    }

    #[test]
    fn invalid_schedules() {
        assert!(make_schedule(0, 0.1, 10.0).is_err());
        assert!(make_schedule(5, 10.0, 0.1).is_err());
        assert!(make_schedule(5, 0.0, 1.0).is_err());
        // the first exponent turns positive
        assert!(matches!(make_schedule(1, 3.0, 3.5), Err(Error::InvalidSchedule(_))));
    }

    proptest! {
        #[test]
        fn schedule_invariants(k in 1usize..60, bmin in 0.01..1.0f64, width in 0.1..30.0f64) {
            if let Ok(s) = make_schedule(k, bmin, bmin + width) {
                prop_assert!(s.betas.iter().all(|b| *b > 0.0 && *b < 1.0));
                prop_assert!(s.betas.windows(2).all(|w| w[0] < w[1]));
                prop_assert!(s.alpha_bars.windows(2).all(|w| w[0] > w[1]));
                prop_assert!((s.alpha_bars[0] - s.alphas[0]).abs() == 0.0);
                for i in 1..k {
                    prop_assert_eq!(s.alpha_bars[i], s.alpha_bars[i - 1] * s.alphas[i]);
                }
            }
        }
    }

    #[test]
    fn forward_collapses() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let x0 = [0.4, -1.3];
        let eps = [0.7, 0.2];
        let a = forward_sample(&x0, 3, &[0.0, 0.0], &s);
        assert_eq!(a, vec![s.alpha_bar(3).sqrt() * 0.4, s.alpha_bar(3).sqrt() * -1.3]);
        let b = forward_sample(&[0.0, 0.0], 2, &eps, &s);
        let c = (1.0 - s.alpha_bar(2)).sqrt();
        assert_eq!(b, vec![c * 0.7, c * 0.2]);
    }

    #[test]
    fn forward_preserves_unit_variance() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let mut rng = seeded(3);
        for k in 1..=5 {
            let n = 100_000;
            let xs: Vec<f64> = (0..n)
                .map(|_| {
                    let x0 = standard_normal(1, &mut rng);
                    let e = standard_normal(1, &mut rng);
                    forward_sample(&x0, k, &e, &s)[0]
                })
                .collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((var - 1.0).abs() <= 0.03, "k={k} var={var}");
        }
    }

    fn toy_items(n: usize, seed: u64) -> Vec<DiffusionItem> {
        let mut rng = seeded(seed);
        (0..n)
            .map(|_| DiffusionItem {
                cond: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
                x0: (0..2).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn zero_net_loss_is_dimension() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let net = EpsilonNet::from_mlp(Mlp::zeros(&[4 + 3 + 3, 8, 8, 4], Activation::Silu), 4, 3, 5).unwrap();
        let mut rng = seeded(1);
        let items: Vec<DiffusionItem> = (0..20_000)
            .map(|_| DiffusionItem {
                cond: vec![0.1, 0.2, 0.3],
                x0: standard_normal(4, &mut rng),
            })
            .collect();
        let (loss, _) = diffusion_loss(&net, &items, &s, &mut rng).unwrap();
        assert!((loss - 4.0).abs() <= 0.2, "{loss}");
    }

    #[test]
    fn oracle_net_has_zero_loss() {
        // with x0 = 0 and a single step, eps = x_k / sqrt(1 - abar): a linear net recovers it
        let s = make_schedule(1, 0.1, 10.0).unwrap();
        let c = 1.0 / (1.0 - s.alpha_bar(1)).sqrt();
        let mut mlp = Mlp::zeros(&[1 + 1 + 3, 1, 1, 1], Activation::Relu);
        // layer 1: h = relu(x + 10); layer 2: h2 = relu(h); out = c * h2 - 10c
        let p = mlp.params_mut();
        p[0] = 1.0;
        p[5] = 10.0;
        p[6] = 1.0;
        p[8] = c;
        p[9] = -10.0 * c;
        let net = EpsilonNet::from_mlp(mlp, 1, 1, 1).unwrap();
        let mut rng = seeded(0);
        let items: Vec<DiffusionItem> = (0..100)
            .map(|_| DiffusionItem {
                cond: vec![0.5],
                x0: vec![0.0],
            })
            .collect();
        let (loss, _) = diffusion_loss(&net, &items, &s, &mut rng).unwrap();
        assert!(loss < 1e-20, "{loss}");
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        for seed in 0..20 {
            let mut rng = seeded(seed);
            let net = EpsilonNet::new(2, 2, 5, [4, 4], &mut rng);
            assert!(net.mlp.num_params() <= 100);
            let items = toy_items(6, seed + 40);
            let draws = draw_noise(&items, &s, &mut rng);
            let (_, grad) = diffusion_loss_with(&net, &items, &draws, &s);
            let h = 1e-6;
            for k in 0..grad.len() {
                let mut q = net.clone();
                q.mlp.params_mut()[k] += h;
                let lp = diffusion_loss_with(&q, &items, &draws, &s).0;
                q.mlp.params_mut()[k] -= 2.0 * h;
                let lm = diffusion_loss_with(&q, &items, &draws, &s).0;
                let fd = (lp - lm) / (2.0 * h);
                let rel = (grad[k] - fd).abs() / grad[k].abs().max(fd.abs()).max(1e-6);
                assert!(rel <= 1e-4, "seed {seed} param {k}: {} vs {fd}", grad[k]);
            }
        }
    }

    #[test]
    fn last_step_is_deterministic_and_zero_net_rescales() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let net = EpsilonNet::new(3, 2, 5, [8, 8], &mut seeded(0));
        let x = [0.3, -0.2, 0.9];
        let a = reverse_step(&net, &x, &[0.1, 0.1], 1, &s, &mut seeded(1));
        let b = reverse_step(&net, &x, &[0.1, 0.1], 1, &s, &mut seeded(2));
        assert_eq!(a, b);

        let zero = EpsilonNet::from_mlp(Mlp::zeros(&[3 + 2 + 3, 4, 4, 3], Activation::Silu), 3, 2, 5).unwrap();
        let k = 4;
        let n = 50_000;
        let mut rng = seeded(5);
        let mut mean = [0.0; 3];
        for _ in 0..n {
            let y = reverse_step(&zero, &x, &[0.0, 0.0], k, &s, &mut rng);
            for j in 0..3 {
                mean[j] += y[j] / n as f64;
            }
        }
        let sd = s.beta(k).sqrt() / (n as f64).sqrt();
        for j in 0..3 {
            assert!((mean[j] - x[j] / s.alpha(k).sqrt()).abs() < 5.0 * sd);
        }
        assert!((reverse_step(&zero, &x, &[0.0, 0.0], 1, &s, &mut rng)[0] - x[0] / s.alpha(1).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn chains_from_noise_stay_finite() {
        let s = make_schedule(5, 0.1, 10.0).unwrap();
        let mut rng = seeded(9);
        for trial in 0..1000 {
            let net = if trial % 100 == 0 {
                EpsilonNet::new(5, 8, 5, [16, 16], &mut rng)
            } else {
                EpsilonNet::new(5, 8, 5, [4, 4], &mut seeded(trial))
            };
            let cond: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            assert!(sample(&net, &cond, &s, &mut rng).iter().all(|v| v.is_finite()));
        }
    }
}
