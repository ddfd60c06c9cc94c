use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::TeacherTransition;
use crate::env::{ParamSpace, ParamVector};
use crate::error::{Error, Result};
use crate::nn::{clip_grad_norm, Activation, Adam, Mlp};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub tau: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub hidden: [usize; 2],
    /// Exploration noise std in unit action space, decayed linearly.
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_steps: usize,
    pub updates_per_step: usize,
    pub max_grad_norm: f64,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            actor_lr: 1e-3,
            critic_lr: 3e-3,
            tau: 0.005,
            gamma: 0.99,
            batch_size: 64,
            hidden: [64, 64],
            noise_start: 0.6,
            noise_end: 0.1,
            noise_decay_steps: 400,
            updates_per_step: 1,
            max_grad_norm: 10.0,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("teacher: {what}")));
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return bad("noise scales must be non-negative");
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DdpgMetrics {
    pub critic_loss: f64,
    pub actor_loss: f64,
}

/// Deterministic actor over performance vectors with a Q critic.
#[derive(Debug, Clone)]
pub struct TeacherAgent {
    pub space: ParamSpace,
    pub config: TeacherConfig,
    pub actor: Mlp,
    pub critic: Mlp,
    pub actor_target: Mlp,
    pub critic_target: Mlp,
    pub(crate) actor_opt: Adam,
    pub(crate) critic_opt: Adam,
    pub explore_steps: usize,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

impl TeacherAgent {
    pub fn new(state_dim: usize, space: ParamSpace, config: TeacherConfig, rng: &mut Rng) -> Self {
        let d = space.len();
        let [h1, h2] = config.hidden;
        let actor = Mlp::new(&[state_dim, h1, h2, d], Activation::Relu, 0.1, rng);
        let critic = Mlp::new(&[state_dim + d, h1, h2, 1], Activation::Relu, 0.1, rng);
        Self::from_nets(space, config, actor, critic)
    }

    pub fn from_nets(space: ParamSpace, config: TeacherConfig, actor: Mlp, critic: Mlp) -> Self {
        assert_eq!(actor.output_dim(), space.len());
        assert_eq!(critic.input_dim(), actor.input_dim() + space.len());
        Self {
            actor_opt: Adam::new(actor.num_params(), config.actor_lr),
            critic_opt: Adam::new(critic.num_params(), config.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
            space,
            config,
            explore_steps: 0,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Actor output in [-1, 1] per dim.
    pub fn unit_action(&self, state: &[f64]) -> Vec<f64> {
        self.actor.forward(state).into_iter().map(f64::tanh).collect()
    }

    /// Unit coordinates of the parameters that `unit` snaps to.
    pub fn snap_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.space.to_unit(&self.space.from_unit(unit))
    }

    pub fn noise_scale(&self) -> f64 {
        let c = &self.config;
        if c.noise_decay_steps == 0 {
            return c.noise_end;
        }
        let t = (self.explore_steps as f64 / c.noise_decay_steps as f64).min(1.0);
        c.noise_start + t * (c.noise_end - c.noise_start)
    }

    pub fn select_action(&mut self, state: &[f64], explore: bool, rng: &mut Rng) -> ParamVector {
        assert_eq!(state.len(), self.state_dim(), "state length must match the actor input");
        let mut u = self.unit_action(state);
        if explore {
            let sd = self.noise_scale();
            for x in &mut u {
                let z: f64 = StandardNormal.sample(rng);
                *x = (*x + sd * z).clamp(-1.0, 1.0);
            }
            self.explore_steps += 1;
        }
        self.space.from_unit(&u)
    }

    pub fn q_value(&self, state: &[f64], action: &ParamVector) -> f64 {
        self.critic.forward(&concat(state, &self.space.to_unit(action)))[0]
    }

    fn target_q(&self, t: &TeacherTransition) -> f64 {
        let a = self.snap_unit(
            &self
                .actor_target
                .forward(&t.next_state)
                .into_iter()
                .map(f64::tanh)
                .collect::<Vec<_>>(),
        );
        t.reward + self.config.gamma * self.critic_target.forward(&concat(&t.next_state, &a))[0]
    }

    fn actor_loss_and_grad(&self, batch: &[TeacherTransition]) -> (f64, Vec<f64>) {
        let inv_n = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; self.actor.num_params()];
        let mut scratch = vec![0.0; self.critic.num_params()];
        let mut loss = 0.0;
        let m = self.state_dim();
        for t in batch {
            let (out, tape) = self.actor.forward_tape(&t.state);
            let u: Vec<f64> = out.iter().map(|x| x.tanh()).collect();
            // straight-through: the critic scores the snapped action
            let (q, ctape) = self.critic.forward_tape(&concat(&t.state, &self.snap_unit(&u)));
            loss -= q[0] * inv_n;
            let g_in = self.critic.backward(&ctape, &[-inv_n], &mut scratch);
            let g_out: Vec<f64> = g_in[m..].iter().zip(&u).map(|(g, u)| g * (1.0 - u * u)).collect();
            self.actor.backward(&tape, &g_out, &mut grad);
        }
        (loss, grad)
    }

    pub fn soft_update_targets(&mut self, tau: f64) {
        self.actor_target.soft_update_from(&self.actor, tau);
        self.critic_target.soft_update_from(&self.critic, tau);
    }

    /// One critic step, one actor step and a soft target update.
    pub fn ddpg_update(&mut self, batch: &[TeacherTransition]) -> Result<DdpgMetrics> {
        assert!(!batch.is_empty(), "empty teacher batch");
        let (critic_loss, mut cg) = critic_loss_and_grad(self, batch);
        if !critic_loss.is_finite() || cg.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                minibatch: 0,
                what: format!("critic loss {critic_loss}"),
            });
        }
        clip_grad_norm(&mut cg, self.config.max_grad_norm);
        self.critic_opt.step(self.critic.params_mut(), &cg);

        let (actor_loss, mut ag) = self.actor_loss_and_grad(batch);
        if !actor_loss.is_finite() || ag.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDiverged {
                minibatch: 0,
                what: format!("actor loss {actor_loss}"),
            });
        }
        clip_grad_norm(&mut ag, self.config.max_grad_norm);
        self.actor_opt.step(self.actor.params_mut(), &ag);
        self.soft_update_targets(self.config.tau);
        Ok(DdpgMetrics { critic_loss, actor_loss })
    }
}

/// Mean squared Bellman error of the online critic against the target
/// networks, and its gradient with respect to the critic parameters.
pub fn critic_loss_and_grad(agent: &TeacherAgent, batch: &[TeacherTransition]) -> (f64, Vec<f64>) {
    let inv_n = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; agent.critic.num_params()];
    let mut loss = 0.0;
    for t in batch {
        let y = agent.target_q(t);
        let input = concat(&t.state, &agent.space.to_unit(&t.action));
        let (q, tape) = agent.critic.forward_tape(&input);
        let diff = q[0] - y;
        loss += diff * diff * inv_n;
        agent.critic.backward(&tape, &[2.0 * diff * inv_n], &mut grad);
    }
    (loss, grad)
}
