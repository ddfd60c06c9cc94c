use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{diffusion_loss, make_schedule, sample, DiffusionItem, DiffusionSchedule, EpsilonNet};
use crate::env::{sample_params, ParamSpace, ParamVector};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::{clip_grad_norm, Adam};
use crate::rng::{seeded, Rng};
use crate::teacher::{teacher_reward, Origin, ReplayBuffer, RewardConfig, TeacherTransition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSource {
    Random,
    ActionDiffusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldModelConfig {
    pub k_diff: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub hidden: [usize; 2],
    pub lr: f64,
    pub batch_size: usize,
    /// Gradient steps per refit.
    pub train_steps: usize,
    /// Real transitions required before synthetic generation starts.
    pub gate: usize,
    /// Synthetic transitions generated per teacher step.
    pub synthetic_per_step: usize,
    pub action_source: ActionSource,
    /// Accepted in configs but not used by the diffusion model.
    pub discount: f64,
    pub max_grad_norm: f64,
}

impl Default for WorldModelConfig {
    fn default() -> Self {
        Self {
            k_diff: 5,
            beta_min: 0.1,
            beta_max: 10.0,
            hidden: [128, 128],
            lr: 3e-4,
            batch_size: 64,
            train_steps: 20,
            gate: 64,
            synthetic_per_step: 16,
            action_source: ActionSource::Random,
            discount: 0.99,
            max_grad_norm: 10.0,
        }
    }
}

impl WorldModelConfig {
    pub fn validate(&self) -> Result<()> {
        make_schedule(self.k_diff, self.beta_min, self.beta_max)?;
        if self.batch_size == 0 || !(self.lr > 0.0) || self.hidden.contains(&0) {
            return Err(Error::Config("world model: batch_size, lr and hidden sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Per-dim affine map from observed `[lo, hi]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Normalizer {
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>) -> Option<Self> {
        let mut it = rows.into_iter();
        let first = it.next()?;
        let mut lo = first.to_vec();
        let mut hi = first.to_vec();
        for r in it {
            for (j, v) in r.iter().enumerate() {
                lo[j] = lo[j].min(*v);
                hi[j] = hi[j].max(*v);
            }
        }
        for j in 0..lo.len() {
            if hi[j] - lo[j] < 1e-9 {
                lo[j] -= 0.5;
                hi[j] += 0.5;
            }
        }
        Some(Self { lo, hi })
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, v)| 2.0 * (v - self.lo[j]) / (self.hi[j] - self.lo[j]) - 1.0)
            .collect()
    }

    pub fn denormalize(&self, y: &[f64]) -> Vec<f64> {
        y.iter()
            .enumerate()
            .map(|(j, v)| self.lo[j] + (v + 1.0) / 2.0 * (self.hi[j] - self.lo[j]))
            .collect()
    }

    /// Half-widths: one normalized unit in raw units, per dim.
    pub fn scale(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| (h - l) / 2.0).collect()
    }
}

fn fit_steps(
    net: &mut EpsilonNet,
    opt: &mut Adam,
    items: &[DiffusionItem],
    schedule: &DiffusionSchedule,
    steps: usize,
    batch_size: usize,
    max_grad_norm: f64,
    rng: &mut Rng,
) -> Result<f64> {
    let mut total = 0.0;
    for _ in 0..steps {
        let batch: Vec<DiffusionItem> = (0..batch_size.min(items.len().max(1)).max(1))
            .map(|_| items[rng.random_range(0..items.len())].clone())
            .collect();
        let (loss, mut grad) = diffusion_loss(net, &batch, schedule, rng)?;
        clip_grad_norm(&mut grad, max_grad_norm);
        opt.step(net.mlp.params_mut(), &grad);
        total += loss;
    }
    Ok(total / steps.max(1) as f64)
}

/// Next-state generator conditioned on (state, action).
#[derive(Debug, Clone)]
pub struct WorldModel {
    pub config: WorldModelConfig,
    pub schedule: DiffusionSchedule,
    pub space: ParamSpace,
    pub net: EpsilonNet,
    pub(crate) opt: Adam,
    pub norm: Option<Normalizer>,
    pub trained_steps: usize,
}

impl WorldModel {
    pub fn new(state_dim: usize, space: ParamSpace, config: WorldModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.k_diff, config.beta_min, config.beta_max)?;
        let net = EpsilonNet::new(state_dim, state_dim + space.len(), config.k_diff, config.hidden, rng);
        Ok(Self {
            opt: Adam::new(net.mlp.num_params(), config.lr),
            config,
            schedule,
            space,
            net,
            norm: None,
            trained_steps: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.net.target_dim
    }

    fn cond(&self, norm: &Normalizer, state: &[f64], action: &ParamVector) -> Vec<f64> {
        let mut c = norm.normalize(state);
        c.extend(self.space.to_unit(action));
        c
    }

    /// Refreshes the normalizer from `data` and takes `steps` gradient steps.
    pub fn train_on(&mut self, data: &[TeacherTransition], steps: usize, rng: &mut Rng) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::NoRealData);
        }
        let norm = Normalizer::fit(data.iter().flat_map(|t| [t.state.as_slice(), t.next_state.as_slice()])).unwrap();
        let items: Vec<DiffusionItem> = data
            .iter()
            .map(|t| DiffusionItem {
                cond: self.cond(&norm, &t.state, &t.action),
                x0: norm.normalize(&t.next_state),
            })
            .collect();
        self.norm = Some(norm);
        let loss = fit_steps(
            &mut self.net,
            &mut self.opt,
            &items,
            &self.schedule,
            steps,
            self.config.batch_size,
            self.config.max_grad_norm,
            rng,
        )?;
        self.trained_steps += steps;
        Ok(loss)
    }

    pub fn train(&mut self, buffer: &ReplayBuffer, steps: usize, rng: &mut Rng) -> Result<f64> {
        let data: Vec<TeacherTransition> = buffer.iter().cloned().collect();
        self.train_on(&data, steps, rng)
    }

    pub fn is_trained(&self) -> bool {
        self.norm.is_some() && self.trained_steps > 0
    }

    /// Normalized-space sample of the next state.
    pub fn sample_normalized(&self, state: &[f64], action: &ParamVector, rng: &mut Rng) -> Result<Vec<f64>> {
        let norm = self.norm.as_ref().ok_or(Error::CannotTrain)?;
        Ok(sample(&self.net, &self.cond(norm, state, action), &self.schedule, rng))
    }

    pub fn sample_next_state(&self, state: &[f64], action: &ParamVector, rng: &mut Rng) -> Result<Vec<f64>> {
        let y = self.sample_normalized(state, action, rng)?;
        Ok(self.norm.as_ref().unwrap().denormalize(&y))
    }
}

/// Behaviour-cloning diffusion over teacher actions given the state.
#[derive(Debug, Clone)]
pub struct ActionModel {
    pub schedule: DiffusionSchedule,
    pub space: ParamSpace,
    pub net: EpsilonNet,
    pub(crate) opt: Adam,
    pub norm: Option<Normalizer>,
    pub config: WorldModelConfig,
    pub trained_steps: usize,
}

impl ActionModel {
    pub fn new(state_dim: usize, space: ParamSpace, config: WorldModelConfig, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let schedule = make_schedule(config.k_diff, config.beta_min, config.beta_max)?;
        let net = EpsilonNet::new(space.len(), state_dim, config.k_diff, config.hidden, rng);
        Ok(Self {
            opt: Adam::new(net.mlp.num_params(), config.lr),
            schedule,
            space,
            net,
            norm: None,
            config,
            trained_steps: 0,
        })
    }

    pub fn train_on(&mut self, data: &[TeacherTransition], steps: usize, rng: &mut Rng) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::NoRealData);
        }
        let norm = Normalizer::fit(data.iter().map(|t| t.state.as_slice())).unwrap();
        let items: Vec<DiffusionItem> = data
            .iter()
            .map(|t| DiffusionItem {
                cond: norm.normalize(&t.state),
                x0: self.space.to_unit(&t.action),
            })
            .collect();
        self.norm = Some(norm);
        let loss = fit_steps(
            &mut self.net,
            &mut self.opt,
            &items,
            &self.schedule,
            steps,
            self.config.batch_size,
            self.config.max_grad_norm,
            rng,
        )?;
        self.trained_steps += steps;
        Ok(loss)
    }

    /// Sampled action clamped into the parameter space.
    pub fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<ParamVector> {
        let norm = self.norm.as_ref().ok_or(Error::CannotTrain)?;
        let u = sample(&self.net, &norm.normalize(state), &self.schedule, rng);
        Ok(self.space.from_unit(&u))
    }
}

/// Synthetic transitions: real states, fresh actions, diffused next states
/// and recomputed teacher rewards.
pub fn gen_synthetic(
    model: &WorldModel,
    actions: Option<&ActionModel>,
    b_real: &ReplayBuffer,
    reward: &RewardConfig,
    count: usize,
    source: ActionSource,
    rng: &mut Rng,
    exec: Exec,
) -> Result<Vec<TeacherTransition>> {
    if b_real.is_empty() {
        return Err(Error::NoRealData);
    }
    if count == 0 {
        return Ok(Vec::new());
    }
    if !model.is_trained() {
        return Err(Error::CannotTrain);
    }
    let action_model = match source {
        ActionSource::Random => None,
        ActionSource::ActionDiffusion => Some(actions.ok_or_else(|| {
            Error::Config("action diffusion selected without an action model".into())
        })?),
    };
    let seeds: Vec<u64> = (0..count).map(|_| rng.random()).collect();
    exec.try_map_indexed(count, |i| {
        let mut r = seeded(seeds[i]);
        let s = &b_real.get(r.random_range(0..b_real.len())).unwrap().state;
        let a = match action_model {
            None => sample_params(&model.space, &mut r),
            Some(m) => m.sample_action(s, &mut r)?,
        };
        let s_next = model.sample_next_state(s, &a, &mut r)?;
        let rw = teacher_reward(s, &s_next, reward)?;
        TeacherTransition::new(s.clone(), a, rw, s_next, Origin::Synthetic)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Dim, DimKind, Family};

    #[test]
    fn normalizer_round_trip() {
        let mut rng = seeded(0);
        let rows: Vec<Vec<f64>> = (0..50).map(|_| (0..4).map(|_| rng.random_range(-150.0..120.0)).collect()).collect();
        let n = Normalizer::fit(rows.iter().map(|r| r.as_slice())).unwrap();
        for r in &rows {
            let y = n.normalize(r);
            assert!(y.iter().all(|v| (-1.0 - 1e-12..=1.0 + 1e-12).contains(v)));
            let back = n.denormalize(&y);
            for (a, b) in r.iter().zip(&back) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
        let flat = Normalizer::fit([[3.0].as_slice(), [3.0].as_slice()]).unwrap();
        assert_eq!(flat.normalize(&[3.0]), vec![0.0]);
    }

    fn buffer_for(space: &ParamSpace, m: usize, n: usize, seed: u64) -> ReplayBuffer {
        let mut rng = seeded(seed);
        let mut b = ReplayBuffer::new(n);
        for _ in 0..n {
            let s: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..1.0)).collect();
            let a = sample_params(space, &mut rng);
            let s2: Vec<f64> = s.iter().map(|x| x + 0.1).collect();
            let r = teacher_reward(&s, &s2, &RewardConfig::default()).unwrap();
            b.push(TeacherTransition::new(s, a, r, s2, Origin::Real).unwrap());
        }
        b
    }

    fn small_config() -> WorldModelConfig {
        WorldModelConfig {
            hidden: [16, 16],
            ..WorldModelConfig::default()
        }
    }

    #[test]
    fn synthetic_contracts() {
        let space = Family::Lander.space();
        let real = buffer_for(&space, 4, 80, 1);
        let mut rng = seeded(2);
        let mut wm = WorldModel::new(4, space.clone(), small_config(), &mut rng).unwrap();
        let cfg = RewardConfig::default();
        assert!(matches!(
            gen_synthetic(&wm, None, &real, &cfg, 4, ActionSource::Random, &mut rng, Exec::Sequential),
            Err(Error::CannotTrain)
        ));
        wm.train(&real, 10, &mut rng).unwrap();
        let none = gen_synthetic(&wm, None, &real, &cfg, 0, ActionSource::Random, &mut rng, Exec::Sequential).unwrap();
        assert!(none.is_empty());
        assert!(matches!(
            gen_synthetic(&wm, None, &ReplayBuffer::new(3), &cfg, 4, ActionSource::Random, &mut rng, Exec::Sequential),
            Err(Error::NoRealData)
        ));
        let out = gen_synthetic(&wm, None, &real, &cfg, 64, ActionSource::Random, &mut seeded(3), Exec::Parallel).unwrap();
        let seq = gen_synthetic(&wm, None, &real, &cfg, 64, ActionSource::Random, &mut seeded(3), Exec::Sequential).unwrap();
        assert_eq!(out, seq);
        for t in &out {
            assert_eq!(t.origin, Origin::Synthetic);
            assert_eq!(t.reward, teacher_reward(&t.state, &t.next_state, &cfg).unwrap());
            space.validate(&t.action).unwrap();
            assert!(real.iter().any(|r| r.state == t.state));
        }
    }

    #[test]
    fn random_actions_are_uniform() {
        let space = ParamSpace::new(vec![Dim::continuous("x", -3.0, 5.0), Dim::discrete("l", &[0.0, 1.0, 2.0, 3.0])]).unwrap();
        let real = buffer_for(&space, 2, 10, 4);
        let mut rng = seeded(5);
        let mut wm = WorldModel::new(2, space.clone(), WorldModelConfig { hidden: [4, 4], ..small_config() }, &mut rng).unwrap();
        wm.train(&real, 1, &mut rng).unwrap();
        let out = gen_synthetic(&wm, None, &real, &RewardConfig::default(), 10_000, ActionSource::Random, &mut rng, Exec::Parallel).unwrap();
        let mut cont = [0.0f64; 10];
        let mut disc = [0.0f64; 4];
        for t in &out {
            let v = t.action.values();
            cont[(((v[0] + 3.0) / 8.0 * 10.0) as usize).min(9)] += 1.0;
            disc[v[1] as usize] += 1.0;
        }
        let chi = |obs: &[f64]| {
            let e = out.len() as f64 / obs.len() as f64;
            obs.iter().map(|o| (o - e).powi(2) / e).sum::<f64>()
        };
        // 0.1% critical values for 9 and 3 degrees of freedom
        assert!(chi(&cont) < 27.88, "{}", chi(&cont));
        assert!(chi(&disc) < 16.27, "{}", chi(&disc));
    }

    #[test]
    fn action_diffusion_learns_a_state_function() {
        let space = ParamSpace::new(vec![Dim::continuous("a", -1.0, 1.0), Dim::continuous("b", 0.0, 4.0)]).unwrap();
        let g = |s: &[f64]| vec![0.8 * s[0] - 0.3 * s[1], 2.0 + 1.5 * s[1] * s[0]];
        let mut rng = seeded(6);
        let data: Vec<TeacherTransition> = (0..512)
            .map(|_| {
                let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a: Vec<f64> = g(&s).iter().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)).collect();
                TeacherTransition::new(s.clone(), ParamVector::new(a), 0.0, s, Origin::Real).unwrap()
            })
            .collect();
        let config = WorldModelConfig {
            hidden: [64, 64],
            lr: 2e-3,
            ..WorldModelConfig::default()
        };
        let mut am = ActionModel::new(2, space.clone(), config, &mut rng).unwrap();
        am.train_on(&data, 3000, &mut rng).unwrap();
        let mut err = 0.0;
        let probes = 100;
        for _ in 0..probes {
            let s: Vec<f64> = (0..2).map(|_| rng.random_range(-0.9..0.9)).collect();
            let a = am.sample_action(&s, &mut rng).unwrap();
            space.validate(&a).unwrap();
            let want = space.to_unit(&ParamVector::new(g(&s)));
            let got = space.to_unit(&a);
            err += want.iter().zip(&got).map(|(w, x)| (w - x).abs()).sum::<f64>() / 2.0;
        }
        err /= probes as f64;
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn sampled_actions_stay_in_bounds() {
        let space = Family::Maze.space();
        let real = buffer_for(&space, 3, 32, 7);
        let data: Vec<TeacherTransition> = real.iter().cloned().collect();
        let mut rng = seeded(8);
        let mut am = ActionModel::new(3, space.clone(), small_config(), &mut rng).unwrap();
        am.train_on(&data, 5, &mut rng).unwrap();
        for _ in 0..500 {
            let s: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            space.validate(&am.sample_action(&s, &mut rng).unwrap()).unwrap();
        }
        assert!(space.dims().iter().all(|d| matches!(d.kind, DimKind::Discrete { .. })));
    }

    #[test]
    fn noisy_samples_differ_by_seed() {
        let space = Family::Lander.space();
        let real = buffer_for(&space, 4, 64, 9);
        let mut rng = seeded(10);
        let mut wm = WorldModel::new(4, space.clone(), small_config(), &mut rng).unwrap();
        wm.train(&real, 5, &mut rng).unwrap();
        let s = real.get(0).unwrap();
        let a = wm.sample_next_state(&s.state, &s.action, &mut seeded(1)).unwrap();
        let b = wm.sample_next_state(&s.state, &s.action, &mut seeded(2)).unwrap();
        assert_ne!(a, b);
    }
}
