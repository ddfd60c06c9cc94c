//! Fidelity check of the world model against a scripted transition oracle.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{Dim, ParamSpace, ParamVector};
use crate::error::Result;
use crate::nn::{Activation, Mlp};
use crate::rng::{derive_seed, seeded, Rng};
use crate::teacher::{Origin, TeacherTransition};
use crate::worldmodel::{standard_normal, WorldModel, WorldModelConfig};

pub const STATE_DIM: usize = 5;
pub const ACTION_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FidelityConfig {
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub train_size: usize,
    pub train_steps: usize,
    pub grid: usize,
    /// Generated samples averaged per grid condition in the point check.
    pub grid_samples: usize,
    pub w1_factor: f64,
    pub point_tolerance: f64,
    /// Noise levels at or below this use the point-prediction check.
    pub point_regime_max_sigma: f64,
    pub model: WorldModelConfig,
    pub seed: u64,
}

impl Default for FidelityConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![0.05, 1.0, 3.0, 10.0],
            samples: 200,
            train_size: 4000,
            train_steps: 6000,
            grid: 5,
            grid_samples: 8,
            w1_factor: 0.35,
            point_tolerance: 0.1,
            point_regime_max_sigma: 0.1,
            model: WorldModelConfig {
                lr: 1e-3,
                batch_size: 128,
                ..WorldModelConfig::default()
            },
            seed: 0,
        }
    }
}

/// Fixed small network standing in for the student's learning dynamics:
/// `f(s, a) = s + 0.5 tanh(W2 tanh(W1 [s; a]))`.
#[derive(Debug, Clone)]
pub struct Oracle {
    net: Mlp,
}

impl Oracle {
    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(derive_seed(seed, "oracle", 0));
        Self {
            net: Mlp::new(&[STATE_DIM + ACTION_DIM, 16, STATE_DIM], Activation::Tanh, 2.0, &mut rng),
        }
    }

    pub fn mean(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut x = s.to_vec();
        x.extend_from_slice(a);
        self.net
            .forward(&x)
            .iter()
            .zip(s)
            .map(|(o, s)| s + 0.5 * o.tanh())
            .collect()
    }

    pub fn draw(&self, s: &[f64], a: &[f64], sigma: f64, rng: &mut Rng) -> Vec<f64> {
        self.mean(s, a)
            .into_iter()
            .zip(standard_normal(STATE_DIM, rng))
            .map(|(m, z)| m + sigma * z)
            .collect()
    }
}

pub fn action_space() -> ParamSpace {
    ParamSpace::new((1..=ACTION_DIM).map(|i| Dim::continuous(&format!("a{i}"), -1.0, 1.0)).collect()).unwrap()
}

/// Wasserstein-1 distance between two equal-size 1-D samples.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut x = a.to_vec();
    let mut y = b.to_vec();
    x.sort_by(f64::total_cmp);
    y.sort_by(f64::total_cmp);
    x.iter().zip(&y).map(|(p, q)| (p - q).abs()).sum::<f64>() / x.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "check")]
pub enum SigmaCheck {
    Distribution { w1: Vec<f64>, threshold: f64 },
    Point { mean_abs_error: f64, threshold: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    pub sigma: f64,
    pub final_loss: f64,
    pub result: SigmaCheck,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub seed: u64,
    pub reports: Vec<SigmaReport>,
    pub pass: bool,
}

fn random_condition(rng: &mut Rng) -> (Vec<f64>, Vec<f64>) {
    let s = (0..STATE_DIM).map(|_| rng.random_range(0.0..1.0)).collect();
    let a = (0..ACTION_DIM).map(|_| rng.random_range(-1.0..1.0)).collect();
    (s, a)
}

pub fn check_sigma(config: &FidelityConfig, oracle: &Oracle, sigma: f64) -> Result<SigmaReport> {
    let tag = sigma.to_bits();
    let mut rng = seeded(derive_seed(config.seed, "fidelity-data", tag));
    let data: Vec<TeacherTransition> = (0..config.train_size)
        .map(|_| {
            let (s, a) = random_condition(&mut rng);
            let s2 = oracle.draw(&s, &a, sigma, &mut rng);
            TeacherTransition::new(s, ParamVector::new(a), 0.0, s2, Origin::Real)
        })
        .collect::<Result<_>>()?;
    let mut model_rng = seeded(derive_seed(config.seed, "fidelity-model", tag));
    let mut wm = WorldModel::new(STATE_DIM, action_space(), config.model.clone(), &mut model_rng)?;
    // the loss is noisy per step; report the mean over the last 5% of training
    let chunk = (config.train_steps / 20).max(1);
    let mut done = 0;
    let mut final_loss = f64::NAN;
    while done < config.train_steps {
        let n = chunk.min(config.train_steps - done);
        final_loss = wm.train_on(&data, n, &mut model_rng)?;
        done += n;
    }

    let mut eval_rng = seeded(derive_seed(config.seed, "fidelity-eval", tag));
    let result = if sigma <= config.point_regime_max_sigma {
        let scale = wm.norm.as_ref().unwrap().scale();
        let (base_s, base_a) = random_condition(&mut eval_rng);
        let lin = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (config.grid - 1).max(1) as f64;
        let mut total = 0.0;
        let mut count = 0usize;
        for i in 0..config.grid {
            for j in 0..config.grid {
                let mut s = base_s.clone();
                let mut a = base_a.clone();
                s[0] = lin(i, 0.05, 0.95);
                a[0] = lin(j, -0.95, 0.95);
                let truth = oracle.mean(&s, &a);
                for _ in 0..config.grid_samples {
                    let gen = wm.sample_next_state(&s, &ParamVector::new(a.clone()), &mut eval_rng)?;
                    for d in 0..STATE_DIM {
                        total += (gen[d] - truth[d]).abs() / scale[d];
                        count += 1;
                    }
                }
            }
        }
        SigmaCheck::Point {
            mean_abs_error: total / count as f64,
            threshold: config.point_tolerance,
        }
    } else {
        let (s, a) = random_condition(&mut eval_rng);
        let action = ParamVector::new(a.clone());
        let real: Vec<Vec<f64>> = (0..config.samples).map(|_| oracle.draw(&s, &a, sigma, &mut eval_rng)).collect();
        let gen: Vec<Vec<f64>> = (0..config.samples)
            .map(|_| wm.sample_next_state(&s, &action, &mut eval_rng))
            .collect::<Result<_>>()?;
        let w1 = (0..STATE_DIM)
            .map(|d| {
                let x: Vec<f64> = real.iter().map(|r| r[d]).collect();
                let y: Vec<f64> = gen.iter().map(|r| r[d]).collect();
                wasserstein1(&x, &y)
            })
            .collect();
        SigmaCheck::Distribution {
            w1,
            threshold: config.w1_factor * sigma,
        }
    };
    let pass = match &result {
        SigmaCheck::Distribution { w1, threshold } => w1.iter().all(|w| w <= threshold),
        SigmaCheck::Point {
            mean_abs_error,
            threshold,
        } => mean_abs_error <= threshold,
    };
    Ok(SigmaReport {
        sigma,
        final_loss,
        result,
        pass,
    })
}

/// Trains one model per noise level and compares it with the oracle.
pub fn run_worldmodel_check(config: &FidelityConfig) -> Result<FidelityReport> {
    let oracle = Oracle::new(config.seed);
    let reports = config
        .sigmas
        .iter()
        .map(|&s| check_sigma(config, &oracle, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(FidelityReport {
        seed: config.seed,
        pass: reports.iter().all(|r| r.pass),
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wasserstein_of_shift_is_shift() {
        let a: Vec<f64> = (0..100).map(|i| i as f64 / 7.0).collect();
        let b: Vec<f64> = a.iter().rev().map(|x| x + 0.25).collect();
        assert!((wasserstein1(&a, &b) - 0.25).abs() < 1e-12);
        assert_eq!(wasserstein1(&a, &a), 0.0);
    }

    #[test]
    fn small_check_is_deterministic() {
        let config = FidelityConfig {
            sigmas: vec![0.05, 3.0],
            samples: 20,
            train_size: 100,
            train_steps: 20,
            grid: 2,
            grid_samples: 1,
            model: WorldModelConfig {
                hidden: [8, 8],
                batch_size: 16,
                ..WorldModelConfig::default()
            },
            ..FidelityConfig::default()
        };
        let a = run_worldmodel_check(&config).unwrap();
        let b = run_worldmodel_check(&config).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.reports.len(), 2);
    }
}
