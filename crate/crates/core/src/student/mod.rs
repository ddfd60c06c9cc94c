//! The lower-level learner: rollout collection, generalised advantage
//! estimation, clipped-surrogate policy optimisation and evaluation.

mod policy;
mod ppo;

pub use policy::{ActMode, ActionDraw, GreedyPolicy, HeadKind, PolicyShape, StudentPolicy, LOG_STD_MAX, LOG_STD_MIN};
pub use ppo::{ppo_loss_and_grad, ppo_update, LossParts, Minibatch, PpoConfig, PpoMetrics};

use serde::{Deserialize, Serialize};

use crate::env::{make_env, EnvInstance, Family, ParamVector};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use rand::Rng as _;

/// Parallel per-step arrays of one rollout plus the bootstrap value of the
/// state following the last step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RolloutBatch {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    /// Episode ended after this step (terminal or truncated).
    pub dones: Vec<bool>,
    pub values: Vec<f64>,
    pub log_probs: Vec<f64>,
    pub last_value: f64,
    pub completed_returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

pub fn collect_rollout(
    policy: &StudentPolicy,
    env: &mut EnvInstance,
    steps: usize,
    rng: &mut Rng,
) -> Result<RolloutBatch> {
    collect_rollout_with(policy, env, steps, ActMode::Sample, rng)
}

/// Runs `policy` for `steps` ticks, resetting `env` (with a seed drawn from
/// `rng`) whenever an episode ends.
pub fn collect_rollout_with(
    policy: &StudentPolicy,
    env: &mut EnvInstance,
    steps: usize,
    mode: ActMode,
    rng: &mut Rng,
) -> Result<RolloutBatch> {
    assert!(steps >= 1, "a rollout needs at least one step");
    let mut batch = RolloutBatch::default();
    let mut obs = if env.is_done() {
        env.reset(rng.random())
    } else {
        env.observation()
    };
    let mut ep_return = 0.0;
    for _ in 0..steps {
        let draw = policy.act(&obs, mode, rng);
        let value = policy.value_of(&obs);
        let res = env.step(&draw.env_action)?;
        ep_return += res.reward;
        batch.observations.push(std::mem::take(&mut obs));
        batch.actions.push(draw.raw);
        batch.rewards.push(res.reward);
        batch.dones.push(res.done());
        batch.values.push(value);
        batch.log_probs.push(draw.log_prob);
        obs = if res.done() {
            batch.completed_returns.push(ep_return);
            ep_return = 0.0;
            env.reset(rng.random())
        } else {
            res.observation
        };
    }
    batch.last_value = if *batch.dones.last().unwrap() {
        0.0
    } else {
        policy.value_of(&obs)
    };
    Ok(batch)
}

/// Backward GAE recursion; returns `(advantages, returns)` with
/// `returns = advantages + values`.
pub fn compute_gae(batch: &RolloutBatch, gamma: f64, lambda: f64) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len();
    assert!(n > 0, "GAE needs a non-empty batch");
    let mut adv = vec![0.0; n];
    let mut carry = 0.0;
    for t in (0..n).rev() {
        let (next_value, live) = if batch.dones[t] {
            (0.0, 0.0)
        } else if t + 1 < n {
            (batch.values[t + 1], 1.0)
        } else {
            (batch.last_value, 1.0)
        };
        let delta = batch.rewards[t] + gamma * next_value - batch.values[t];
        carry = delta + gamma * lambda * live * carry;
        adv[t] = carry;
    }
    let returns = adv.iter().zip(&batch.values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub rollouts: usize,
    pub updates: usize,
    pub episodes: usize,
    pub mean_episode_return: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean positive part of (return - value) over the last rollout.
    pub regret_proxy: f64,
}

/// Alternates rollouts and clipped-surrogate updates until `budget_steps`
/// environment steps are used.
pub fn train_in_env(
    policy: &mut StudentPolicy,
    env: &mut EnvInstance,
    budget_steps: usize,
    config: &PpoConfig,
    rng: &mut Rng,
) -> Result<TrainSummary> {
    config.validate()?;
    if budget_steps < config.minibatches {
        return Err(Error::Config(format!(
            "budget {budget_steps} is smaller than one rollout of {} minibatches",
            config.minibatches
        )));
    }
    let mut summary = TrainSummary::default();
    let mut returns = Vec::new();
    let mut metrics = Vec::new();
    while summary.steps < budget_steps {
        let len = config.rollout_len.min(budget_steps - summary.steps);
        if len < config.minibatches {
            break;
        }
        let batch = collect_rollout(policy, env, len, rng)?;
        summary.steps += len;
        summary.rollouts += 1;
        returns.extend_from_slice(&batch.completed_returns);
        let m = ppo_update(policy, &batch, config, rng)?;
        summary.updates += m.updates;
        summary.regret_proxy = m.regret_proxy;
        metrics.push(m);
    }
    summary.episodes = returns.len();
    summary.mean_episode_return =
        (!returns.is_empty()).then(|| returns.iter().sum::<f64>() / returns.len() as f64);
    let k = metrics.len().max(1) as f64;
    summary.policy_loss = metrics.iter().map(|m| m.policy_loss).sum::<f64>() / k;
    summary.value_loss = metrics.iter().map(|m| m.value_loss).sum::<f64>() / k;
    summary.entropy = metrics.iter().map(|m| m.entropy).sum::<f64>() / k;
    Ok(summary)
}

/// Undiscounted return of one greedy episode from a fresh reset.
pub fn run_greedy_episode<P: GreedyPolicy + ?Sized>(
    policy: &P,
    env: &mut EnvInstance,
    reset_seed: u64,
) -> Result<f64> {
    let mut obs = env.reset(reset_seed);
    let mut total = 0.0;
    loop {
        let res = env.step(&policy.act_greedy(&obs))?;
        total += res.reward;
        if res.done() {
            return Ok(total);
        }
        obs = res.observation;
    }
}

/// Mean undiscounted greedy return over `episodes` seeded episodes of the
/// environment built from `(params, seed)`.
pub fn evaluate_policy<P: GreedyPolicy + ?Sized>(
    policy: &P,
    params: &ParamVector,
    family: Family,
    episodes: usize,
    seed: u64,
) -> Result<f64> {
    assert!(episodes >= 1, "evaluation needs at least one episode");
    let mut env = make_env(family, params, seed)?;
    let mut total = 0.0;
    for e in 0..episodes {
        total += run_greedy_episode(policy, &mut env, derive_seed(seed, "eval-episode", e as u64))?;
    }
    Ok(total / episodes as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::maze::{MazeEnv, MazeGrid, STEP_COST};
    use crate::rng::seeded;

    fn batch(rewards: &[f64], values: &[f64], dones: &[bool], last_value: f64) -> RolloutBatch {
        RolloutBatch {
            observations: vec![vec![]; rewards.len()],
            actions: vec![vec![0.0]; rewards.len()],
            rewards: rewards.to_vec(),
            dones: dones.to_vec(),
            values: values.to_vec(),
            log_probs: vec![0.0; rewards.len()],
            last_value,
            completed_returns: vec![],
        }
    }

    #[test]
    fn gae_lambda_zero_is_one_step_td() {
        let b = batch(&[0.5, -1.0, 2.0, 0.3], &[0.1, 0.4, -0.2, 0.7], &[false; 4], 0.25);
        let (adv, _) = compute_gae(&b, 0.97, 0.0);
        let next = [0.4, -0.2, 0.7, 0.25];
        for t in 0..4 {
            assert_eq!(adv[t], b.rewards[t] + 0.97 * next[t] - b.values[t]);
        }
    }

    #[test]
    fn gae_lambda_one_gamma_one_zero_values_is_suffix_sum() {
        let r = [1.0, -2.0, 0.5, 3.0];
        let b = batch(&r, &[0.0; 4], &[false; 4], 0.0);
        let (adv, ret) = compute_gae(&b, 1.0, 1.0);
        for t in 0..4 {
            let suffix: f64 = r[t..].iter().sum();
            assert!((adv[t] - suffix).abs() < 1e-15);
            assert_eq!(adv[t], ret[t]);
        }
    }

    #[test]
    fn gae_three_step_hand_recursion() {
        // deltas: 0.68, -0.11, 0.9; A_t = sum_l (0.72)^l delta_{t+l}
        let b = batch(&[1.0, 0.0, 1.0], &[0.5, 0.2, 0.1], &[false; 3], 0.0);
        let (adv, _) = compute_gae(&b, 0.9, 0.8);
        let deltas = [1.0 + 0.9 * 0.2 - 0.5, 0.0 + 0.9 * 0.1 - 0.2, 1.0 + 0.9 * 0.0 - 0.1];
        for t in 0..3 {
            let expect: f64 = (t..3).map(|l| 0.72f64.powi((l - t) as i32) * deltas[l]).sum();
            assert!((adv[t] - expect).abs() < 1e-12);
        }
        assert!((adv[0] - 1.06736).abs() < 1e-12);
    }

    #[test]
    fn gae_cuts_at_episode_boundaries() {
        let b = batch(&[1.0, 1.0], &[0.0, 0.0], &[true, false], 5.0);
        let (adv, _) = compute_gae(&b, 1.0, 1.0);
        assert_eq!(adv, vec![1.0, 6.0]);
    }

    fn tiny_maze() -> EnvInstance {
        EnvInstance::Maze(MazeEnv::from_grid(MazeGrid::new(vec![vec![-1, 1, -1], vec![-1, 2, -1]]).unwrap()).unwrap())
    }

    #[test]
    fn rollout_shapes_and_determinism() {
        let policy = StudentPolicy::for_family(Family::Maze, [16, 16], 0.99, 0.95, &mut seeded(0));
        let mut env = tiny_maze();
        let b = collect_rollout(&policy, &mut env, 1, &mut seeded(1)).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b.observations.len(), 1);
        assert_eq!(b.log_probs.len(), 1);

        let run = || {
            let mut env = make_env(Family::Maze, &ParamVector::new(vec![0.0, 1.0, 1.0, 1.0]), 4).unwrap();
            collect_rollout_with(&policy, &mut env, 64, ActMode::Greedy, &mut seeded(9)).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn maze_rewards_are_bounded() {
        let policy = StudentPolicy::for_family(Family::Maze, [16, 16], 0.99, 0.95, &mut seeded(3));
        let mut env = make_env(Family::Maze, &ParamVector::new(vec![1.0, 1.0, 1.0, 2.0]), 11).unwrap();
        let horizon = env.horizon() as f64;
        let b = collect_rollout(&policy, &mut env, 500, &mut seeded(2)).unwrap();
        assert!(b.rewards.iter().all(|&r| r >= STEP_COST * horizon - 1e-9 && r <= 1.0));
        assert!(b.completed_returns.iter().all(|&r| r >= STEP_COST * horizon - 1e-9 && r <= 1.0));
    }

    #[test]
    fn one_rollout_budget_counts_updates() {
        let config = PpoConfig {
            rollout_len: 50,
            ..PpoConfig::default()
        };
        let mut policy = StudentPolicy::for_family(Family::Maze, [16, 16], 0.99, 0.95, &mut seeded(0));
        let mut env = tiny_maze();
        let s = train_in_env(&mut policy, &mut env, 50, &config, &mut seeded(1)).unwrap();
        assert_eq!(s.updates, config.epochs * config.minibatches);
        assert_eq!(s.rollouts, 1);
        // 50 environments x 4 epochs x 5 minibatches per teacher episode
        assert_eq!(50 * s.updates, 1000);
    }

    #[test]
    fn learns_a_one_step_maze() {
        let config = PpoConfig {
            rollout_len: 64,
            ..PpoConfig::default()
        };
        let mut rng = seeded(5);
        let mut policy = StudentPolicy::for_family(Family::Maze, [32, 32], 0.99, 0.95, &mut rng);
        let mut env = tiny_maze();
        train_in_env(&mut policy, &mut env, 64 * 30, &config, &mut rng).unwrap();
        // greedy success on the goal directly below the start
        let mut eval_env = tiny_maze();
        let ret = run_greedy_episode(&policy, &mut eval_env, 0).unwrap();
        assert_eq!(ret, 1.0);
    }

    #[test]
    fn categorical_outputs_stay_on_simplex() {
        let mut rng = seeded(12);
        let mut policy = StudentPolicy::for_family(Family::Maze, [16, 16], 0.99, 0.95, &mut rng);
        let mut env = make_env(Family::Maze, &ParamVector::new(vec![0.0, 0.0, 0.0, 1.0]), 3).unwrap();
        let config = PpoConfig {
            rollout_len: 40,
            ..PpoConfig::default()
        };
        for _ in 0..5 {
            train_in_env(&mut policy, &mut env, 40, &config, &mut rng).unwrap();
            for _ in 0..50 {
                let obs: Vec<f64> = (0..11).map(|_| rng.random_range(-1.0..1.0)).collect();
                let p = policy.action_probs(&obs);
                assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                assert!(p.iter().all(|&x| (0.0..=1.0).contains(&x)));
            }
        }
    }

    #[test]
    fn evaluation_is_pure() {
        let policy = StudentPolicy::for_family(Family::Lander, [16, 16], 0.99, 0.95, &mut seeded(4));
        let before = policy.flat_params();
        let p = ParamVector::new(vec![-8.0, 2.0, 0.5]);
        let a = evaluate_policy(&policy, &p, Family::Lander, 3, 17).unwrap();
        let b = evaluate_policy(&policy, &p, Family::Lander, 3, 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(before, policy.flat_params());
        let single = evaluate_policy(&policy, &p, Family::Lander, 1, 17).unwrap();
        let mut env = make_env(Family::Lander, &p, 17).unwrap();
        let direct = run_greedy_episode(&policy, &mut env, derive_seed(17, "eval-episode", 0)).unwrap();
        assert_eq!(single, direct);
    }

    #[test]
    fn random_policies_lose_on_mazes() {
        let mut nonpositive = 0;
        for s in 0..100u64 {
            let policy = StudentPolicy::for_family(Family::Maze, [16, 16], 0.99, 0.95, &mut seeded(1000 + s));
            let params = crate::env::sample_params(&Family::Maze.space(), &mut seeded(s));
            if evaluate_policy(&policy, &params, Family::Maze, 1, s).unwrap() <= 0.0 {
                nonpositive += 1;
            }
        }
        assert!(nonpositive >= 90, "{nonpositive}");
    }
}
