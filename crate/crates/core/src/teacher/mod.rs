//! The upper-level agent: fairness-aware reward, replay buffers and a
//! deterministic-policy-gradient actor-critic over performance vectors.

mod agent;
mod buffer;

pub use agent::{critic_loss_and_grad, DdpgMetrics, TeacherAgent, TeacherConfig};
pub use buffer::{mix_batch, ReplayBuffer, DEFAULT_SYNTHETIC_CAPACITY};

use serde::{Deserialize, Serialize};

use crate::env::ParamVector;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    /// Weight of the fairness penalty.
    pub eta: f64,
    pub eps_cv: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { eta: 1.0, eps_cv: 1e-8 }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be a finite non-negative number, got {}", self.eta)));
        }
        if !(self.eps_cv > 0.0) {
            return Err(Error::Config(format!("eps_cv must be positive, got {}", self.eps_cv)));
        }
        Ok(())
    }
}

fn same_len(s: &[f64], s_next: &[f64]) -> Result<()> {
    if s.len() != s_next.len() {
        return Err(Error::Shape {
            expected: s.len(),
            got: s_next.len(),
        });
    }
    Ok(())
}

/// Total improvement across evaluation environments.
pub fn progress_reward(s: &[f64], s_next: &[f64]) -> Result<f64> {
    same_len(s, s_next)?;
    Ok(s.iter().zip(s_next).map(|(a, b)| b - a).sum())
}

/// Coefficient of variation of the per-environment improvements, with
/// `eps_cv` guarding a zero mean.
pub fn cv(s: &[f64], s_next: &[f64], eps_cv: f64) -> Result<f64> {
    same_len(s, s_next)?;
    let m = s.len();
    if m < 2 {
        return Err(Error::InsufficientDimensions { needed: 2, got: m });
    }
    let omega: Vec<f64> = s.iter().zip(s_next).map(|(a, b)| b - a).collect();
    let mean = omega.iter().sum::<f64>() / m as f64;
    let ss: f64 = omega.iter().map(|w| (w - mean).powi(2)).sum();
    Ok((ss / ((m - 1) as f64 * (mean * mean + eps_cv))).sqrt())
}

pub fn teacher_reward(s: &[f64], s_next: &[f64], config: &RewardConfig) -> Result<f64> {
    let progress = progress_reward(s, s_next)?;
    if config.eta == 0.0 {
        return Ok(progress);
    }
    Ok(progress - config.eta * cv(s, s_next, config.eps_cv)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeacherTransition {
    pub state: Vec<f64>,
    pub action: ParamVector,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub origin: Origin,
}

impl TeacherTransition {
    pub fn new(state: Vec<f64>, action: ParamVector, reward: f64, next_state: Vec<f64>, origin: Origin) -> Result<Self> {
        same_len(&state, &next_state)?;
        if !reward.is_finite() {
            return Err(Error::Config(format!("transition reward must be finite, got {reward}")));
        }
        Ok(Self {
            state,
            action,
            reward,
            next_state,
            origin,
        })
    }
}
