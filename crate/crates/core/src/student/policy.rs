use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::env::{Action, ActionSpec, Family};
use crate::nn::{Activation, Adam, Mlp};
use crate::rng::Rng;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    Categorical { actions: usize },
    SquashedGaussian { dim: usize },
}

impl HeadKind {
    pub fn for_family(family: Family) -> Self {
        match family.action_spec() {
            ActionSpec::Discrete(n) => HeadKind::Categorical { actions: n },
            ActionSpec::Continuous(d) => HeadKind::SquashedGaussian { dim: d },
        }
    }

    pub fn out_dim(self) -> usize {
        match self {
            HeadKind::Categorical { actions } => actions,
            HeadKind::SquashedGaussian { dim } => dim,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActMode {
    Sample,
    Greedy,
}

/// Anything that can pick a deterministic action from an observation.
pub trait GreedyPolicy: Sync {
    fn act_greedy(&self, obs: &[f64]) -> Action;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyShape {
    pub obs_dim: usize,
    pub hidden: [usize; 2],
    pub head: HeadKind,
}

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

/// Dense actor-critic student.
#[derive(Debug, Clone)]
pub struct StudentPolicy {
    pub shape: PolicyShape,
    pub policy: Mlp,
    /// State-independent log standard deviation; empty for categorical heads.
    pub log_std: Vec<f64>,
    pub value: Mlp,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub(crate) optim: Option<(Adam, Adam)>,
}

/// Output of one stochastic or greedy action choice.
#[derive(Debug, Clone)]
pub struct ActionDraw {
    pub env_action: Action,
    /// Stored representation: the action index, or the pre-squash Gaussian sample.
    pub raw: Vec<f64>,
    pub log_prob: f64,
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// `log(1 - tanh(u)^2)` without cancellation.
pub(crate) fn log_one_minus_tanh_sq(u: f64) -> f64 {
    let softplus = |x: f64| if x > 30.0 { x } else { x.exp().ln_1p() };
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

impl StudentPolicy {
    pub fn new(shape: PolicyShape, gamma: f64, gae_lambda: f64, rng: &mut Rng) -> Self {
        let [h1, h2] = shape.hidden;
        let out = shape.head.out_dim();
        let policy = Mlp::new(&[shape.obs_dim, h1, h2, out], Activation::Tanh, 0.01, rng);
        let value = Mlp::new(&[shape.obs_dim, h1, h2, 1], Activation::Tanh, 1.0, rng);
        let log_std = match shape.head {
            HeadKind::Categorical { .. } => Vec::new(),
            HeadKind::SquashedGaussian { dim } => vec![-0.5; dim],
        };
        Self {
            shape,
            policy,
            log_std,
            value,
            gamma,
            gae_lambda,
            optim: None,
        }
    }

    pub fn for_family(family: Family, hidden: [usize; 2], gamma: f64, gae_lambda: f64, rng: &mut Rng) -> Self {
        let shape = PolicyShape {
            obs_dim: family.obs_dim(),
            hidden,
            head: HeadKind::for_family(family),
        };
        Self::new(shape, gamma, gae_lambda, rng)
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    pub fn action_probs(&self, obs: &[f64]) -> Vec<f64> {
        softmax(&self.policy.forward(obs))
    }

    fn std(&self) -> Vec<f64> {
        self.log_std
            .iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX).exp())
            .collect()
    }

    pub fn act(&self, obs: &[f64], mode: ActMode, rng: &mut Rng) -> ActionDraw {
        let out = self.policy.forward(obs);
        match self.shape.head {
            HeadKind::Categorical { .. } => {
                let logp = log_softmax(&out);
                let a = match mode {
                    ActMode::Greedy => argmax(&out),
                    ActMode::Sample => {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        let mut pick = logp.len() - 1;
                        for (i, lp) in logp.iter().enumerate() {
                            acc += lp.exp();
                            if u < acc {
                                pick = i;
                                break;
                            }
                        }
                        pick
                    }
                };
                ActionDraw {
                    env_action: Action::Discrete(a),
                    raw: vec![a as f64],
                    log_prob: logp[a],
                }
            }
            HeadKind::SquashedGaussian { .. } => {
                let std = self.std();
                let u: Vec<f64> = match mode {
                    ActMode::Greedy => out.clone(),
                    ActMode::Sample => out
                        .iter()
                        .zip(&std)
                        .map(|(m, s)| {
                            let z: f64 = StandardNormal.sample(rng);
                            m + s * z
                        })
                        .collect(),
                };
                let log_prob = self.gaussian_log_prob(&out, &u);
                ActionDraw {
                    env_action: Action::Continuous(u.iter().map(|x| x.tanh()).collect()),
                    raw: u,
                    log_prob,
                }
            }
        }
    }

    pub(crate) fn gaussian_log_prob(&self, mean: &[f64], u: &[f64]) -> f64 {
        mean.iter()
            .zip(u)
            .zip(&self.log_std)
            .map(|((m, x), ls)| {
                let ls = ls.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let z = (x - m) / ls.exp();
                -0.5 * z * z - ls - HALF_LN_2PI - log_one_minus_tanh_sq(*x)
            })
            .sum()
    }

    /// Flat view of every trainable parameter: policy net, log-std, value net.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.policy.params().to_vec();
        v.extend_from_slice(&self.log_std);
        v.extend_from_slice(self.value.params());
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let np = self.policy.num_params();
        let ns = self.log_std.len();
        self.policy.params_mut().copy_from_slice(&flat[..np]);
        self.log_std.copy_from_slice(&flat[np..np + ns]);
        self.value.params_mut().copy_from_slice(&flat[np + ns..]);
    }

    pub fn num_params(&self) -> usize {
        self.policy.num_params() + self.log_std.len() + self.value.num_params()
    }

    pub fn is_finite(&self) -> bool {
        self.policy.is_finite() && self.value.is_finite() && self.log_std.iter().all(|x| x.is_finite())
    }
}

impl GreedyPolicy for StudentPolicy {
    fn act_greedy(&self, obs: &[f64]) -> Action {
        let out = self.policy.forward(obs);
        match self.shape.head {
            HeadKind::Categorical { .. } => Action::Discrete(argmax(&out)),
            HeadKind::SquashedGaussian { .. } => Action::Continuous(out.iter().map(|x| x.tanh()).collect()),
        }
    }
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}
