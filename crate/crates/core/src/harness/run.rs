//! The episodic teacher-student protocol shared by every teacher kind.

use std::path::PathBuf;

use crate::baselines::{accel_next, dr_next, reset_on_episode, LevelBuffer, Provenance, TeacherKind};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::evalrep::{perf_vector, EvalSet};
use crate::exec::Exec;
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::log::{LogHeader, RunEvent, RunLog, SCHEMA_VERSION};
use crate::rng::SeedStreams;
use crate::student::{train_in_env, StudentPolicy};
use crate::teacher::{mix_batch, teacher_reward, Origin, ReplayBuffer, TeacherAgent, TeacherTransition};
use crate::worldmodel::{gen_synthetic, ActionModel, ActionSource, WorldModel};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Directory for per-episode checkpoints; none are written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

/// Runs SHED or its h-MDP ablation.
pub fn run_shed(config: &RunConfig, options: &RunOptions) -> Result<RunLog> {
    if !config.teacher.uses_agent() {
        return Err(Error::Config(format!("{} is not a learned teacher", config.teacher)));
    }
    run(config, options)
}

/// Runs domain randomization or one of the level-replay teachers.
pub fn run_baseline(config: &RunConfig, options: &RunOptions) -> Result<RunLog> {
    if config.teacher.uses_agent() {
        return Err(Error::Config(format!("{} is not a baseline teacher", config.teacher)));
    }
    run(config, options)
}

/// Dispatches on `config.teacher`. Any module error aborts the run and
/// reports the index of the event that would have come next.
pub fn run(config: &RunConfig, options: &RunOptions) -> Result<RunLog> {
    config.validate()?;
    let (eval, test) = config.build_sets()?;
    let mut log = RunLog::new(LogHeader {
        schema_version: SCHEMA_VERSION,
        config_hash: config.hash(),
        config: config.clone(),
        eval_set: eval.entries().to_vec(),
        test_set: test.entries().to_vec(),
    });
    match Protocol::new(config, options, &eval, &test).and_then(|mut p| p.run(&mut log)) {
        Ok(()) => Ok(log),
        Err(e) => Err(Error::RunAborted {
            event_index: log.events.len(),
            source: Box::new(e),
        }),
    }
}

struct Protocol<'a> {
    config: &'a RunConfig,
    options: &'a RunOptions,
    eval: &'a EvalSet,
    test: &'a EvalSet,
    streams: SeedStreams,
    exec: Exec,
    agent: Option<TeacherAgent>,
    world: Option<WorldModel>,
    action_model: Option<ActionModel>,
    levels: Option<LevelBuffer>,
    real: ReplayBuffer,
    syn: ReplayBuffer,
    teacher_rng: crate::rng::Rng,
    env_rng: crate::rng::Rng,
    diffusion_rng: crate::rng::Rng,
    student_updates: usize,
    student_steps: usize,
    environments: usize,
    synthetic: usize,
}

impl<'a> Protocol<'a> {
    fn new(config: &'a RunConfig, options: &'a RunOptions, eval: &'a EvalSet, test: &'a EvalSet) -> Result<Self> {
        let streams = SeedStreams::new(config.seed);
        let space = config.family.space();
        let m = eval.len();
        let agent = config
            .teacher
            .uses_agent()
            .then(|| TeacherAgent::new(m, space.clone(), config.agent.clone(), &mut streams.rng("teacher-init", 0)));
        let shed = config.teacher == TeacherKind::Shed;
        let world = if shed {
            Some(WorldModel::new(m, space.clone(), config.diffusion.clone(), &mut streams.rng("diffusion-init", 0))?)
        } else {
            None
        };
        let action_model = if shed && config.diffusion.action_source == ActionSource::ActionDiffusion {
            Some(ActionModel::new(m, space, config.diffusion.clone(), &mut streams.rng("diffusion-init", 1))?)
        } else {
            None
        };
        Ok(Self {
            config,
            options,
            eval,
            test,
            exec: if config.parallel { Exec::Parallel } else { Exec::Sequential },
            agent,
            world,
            action_model,
            levels: config
                .teacher
                .uses_level_buffer()
                .then(|| LevelBuffer::new(config.levels.clone())),
            real: ReplayBuffer::new(config.real_capacity),
            syn: ReplayBuffer::new(config.synthetic_capacity),
            teacher_rng: streams.rng("teacher", 0),
            env_rng: streams.rng("env", 0),
            diffusion_rng: streams.rng("diffusion", 0),
            streams,
            student_updates: 0,
            student_steps: 0,
            environments: 0,
            synthetic: 0,
        })
    }

    fn state_of(&self, perf: &[f64]) -> Vec<f64> {
        let b = self.config.bounds();
        perf.iter().map(|&p| b.normalize(p)).collect()
    }

    fn evaluates_test(&self, episode: usize) -> bool {
        self.config.test_all_episodes || episode + 1 == self.config.episodes
    }

    fn test_eval(&self, student: &StudentPolicy, episode: usize, environments: usize, log: &mut RunLog) -> Result<()> {
        let seed = self.streams.seed("test", episode as u64);
        let returns = perf_vector(student, self.test, self.config.test_episodes, seed, self.exec)?.values;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        log.push(RunEvent::TestEval {
            episode,
            environments,
            returns,
            mean,
        });
        Ok(())
    }

    fn run(&mut self, log: &mut RunLog) -> Result<()> {
        let c = self.config;
        for episode in 0..c.episodes {
            log.push(RunEvent::EpisodeStart { episode });
            if episode > 0 {
                if let Some(levels) = self.levels.as_mut() {
                    let before = levels.len();
                    reset_on_episode(levels, c.teacher);
                    if levels.len() != before {
                        log.push(RunEvent::LevelBufferReset {
                            episode,
                            cleared: before - levels.len(),
                        });
                    }
                }
            }
            let mut student = StudentPolicy::for_family(
                c.family,
                c.ppo.hidden,
                c.ppo.gamma,
                c.ppo.gae_lambda,
                &mut self.streams.rng("student-init", episode as u64),
            );
            let mut student_rng = self.streams.rng("student", episode as u64);
            let mut state = Vec::new();
            if self.agent.is_some() {
                let perf = self.perf(&student, episode, 0)?;
                state = self.state_of(&perf);
                log.push(RunEvent::InitialState {
                    episode,
                    perf,
                    state: state.clone(),
                });
            }
            if self.evaluates_test(episode) {
                self.test_eval(&student, episode, 0, log)?;
            }
            for step in 0..c.env_budget {
                state = self.step(&mut student, &mut student_rng, episode, step, state, log)?;
                let done = step + 1;
                if self.evaluates_test(episode) && (done % c.test_every == 0 || done == c.env_budget) {
                    self.test_eval(&student, episode, done, log)?;
                }
            }
            if let Some(dir) = &self.options.checkpoint_dir {
                let mut ck = Checkpoint::new(episode as u64).with_student(&student);
                if let Some(agent) = &self.agent {
                    ck = ck.with_teacher(agent);
                }
                let file = format!("checkpoint-{episode:03}.bin");
                let sha256 = ck.save(&dir.join(&file))?;
                log.push(RunEvent::Checkpoint { episode, file, sha256 });
            }
        }
        log.push(RunEvent::RunEnd {
            environments: self.environments,
            student_updates: self.student_updates,
            student_steps: self.student_steps,
            synthetic_transitions: self.synthetic,
        });
        Ok(())
    }

    fn perf(&self, student: &StudentPolicy, episode: usize, step: usize) -> Result<Vec<f64>> {
        let idx = (episode * (self.config.env_budget + 1) + step) as u64;
        let seed = self.streams.seed("eval", idx);
        Ok(perf_vector(student, self.eval, self.config.eval_episodes, seed, self.exec)?.values)
    }

    fn step(
        &mut self,
        student: &mut StudentPolicy,
        student_rng: &mut crate::rng::Rng,
        episode: usize,
        step: usize,
        state: Vec<f64>,
        log: &mut RunLog,
    ) -> Result<Vec<f64>> {
        let c = self.config;
        let space = c.family.space();
        let (params, provenance) = match c.teacher {
            TeacherKind::Shed | TeacherKind::HMdp => {
                let agent = self.agent.as_mut().expect("learned teacher");
                (agent.select_action(&state, true, &mut self.teacher_rng), Provenance::Teacher)
            }
            TeacherKind::Dr => (dr_next(&space, &mut self.env_rng), Provenance::Fresh),
            TeacherKind::Accel | TeacherKind::AccelEdit => {
                accel_next(self.levels.as_mut().expect("level buffer"), &space, &mut self.env_rng)
            }
        };
        let instance_seed = self.streams.seed("instance", (episode * c.env_budget + step) as u64);
        if self.eval.contains_env(&params, instance_seed) || self.test.contains_env(&params, instance_seed) {
            return Err(Error::Disjointness(format!(
                "generated environment {:?} (seed {instance_seed}) belongs to a held-out set",
                params.values()
            )));
        }
        log.push(RunEvent::EnvGenerated {
            episode,
            step,
            params: params.values().to_vec(),
            instance_seed,
            teacher: c.teacher,
            provenance,
        });
        self.environments += 1;

        let mut env = make_env(c.family, &params, instance_seed)?;
        let summary = train_in_env(student, &mut env, c.student_steps, &c.ppo, student_rng)?;
        self.student_updates += summary.updates;
        self.student_steps += summary.steps;
        log.push(RunEvent::StudentTrained {
            episode,
            step,
            env_steps: summary.steps,
            updates: summary.updates,
            episodes: summary.episodes,
            mean_episode_return: summary.mean_episode_return,
            policy_loss: summary.policy_loss,
            value_loss: summary.value_loss,
            entropy: summary.entropy,
            regret_proxy: summary.regret_proxy,
        });
        if let Some(levels) = self.levels.as_mut() {
            levels.insert(params, summary.regret_proxy, episode);
            return Ok(state);
        }
        if self.agent.is_none() {
            return Ok(state);
        }

        let perf = self.perf(student, episode, step + 1)?;
        let next = self.state_of(&perf);
        log.push(RunEvent::PerfSnapshot { episode, step, perf });
        let reward = teacher_reward(&state, &next, &c.reward)?;
        log.push(RunEvent::TeacherReward { episode, step, reward });
        self.real
            .push(TeacherTransition::new(state, params, reward, next.clone(), Origin::Real)?);

        if let Some(world) = self.world.as_mut() {
            if self.real.len() >= c.diffusion.gate {
                let loss = world.train(&self.real, c.diffusion.train_steps, &mut self.diffusion_rng)?;
                log.push(RunEvent::WorldModelTrained { episode, step, loss });
                if let Some(am) = self.action_model.as_mut() {
                    let data: Vec<TeacherTransition> = self.real.iter().cloned().collect();
                    am.train_on(&data, c.diffusion.train_steps, &mut self.diffusion_rng)?;
                }
                let fresh = gen_synthetic(
                    world,
                    self.action_model.as_ref(),
                    &self.real,
                    &c.reward,
                    c.diffusion.synthetic_per_step,
                    c.diffusion.action_source,
                    &mut self.diffusion_rng,
                    self.exec,
                )?;
                let count = fresh.len();
                for t in fresh {
                    self.syn.push(t);
                }
                self.synthetic += count;
                log.push(RunEvent::SyntheticGenerated { episode, step, count });
            }
        }

        let agent = self.agent.as_mut().expect("learned teacher");
        for _ in 0..c.agent.updates_per_step {
            let batch = mix_batch(&self.real, &self.syn, c.effective_psi(), c.agent.batch_size, &mut self.teacher_rng)?;
            let real = batch.iter().filter(|t| t.origin == Origin::Real).count();
            let m = agent.ddpg_update(&batch)?;
            log.push(RunEvent::TeacherUpdate {
                episode,
                step,
                critic_loss: m.critic_loss,
                actor_loss: m.actor_loss,
                real,
                synthetic: batch.len() - real,
            });
        }
        Ok(next)
    }
}
