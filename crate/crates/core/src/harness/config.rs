use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{LevelBufferConfig, TeacherKind};
use crate::env::Family;
use crate::error::{Error, Result};
use crate::evalrep::{build_eval_set, build_eval_set_excluding, ensure_disjoint, EvalMode, EvalSet};
use crate::student::PpoConfig;
use crate::teacher::{RewardConfig, TeacherConfig, DEFAULT_SYNTHETIC_CAPACITY};
use crate::worldmodel::WorldModelConfig;

/// Parses TOML, failing with every unrecognised key path when any are present.
pub fn parse_strict<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = toml::Deserializer::new(text);
    let mut unknown = Vec::new();
    let value: T = serde_ignored::deserialize(de, |path| unknown.push(path.to_string()))
        .map_err(|e| Error::Toml(e.to_string()))?;
    if !unknown.is_empty() {
        return Err(Error::UnknownKeys(unknown));
    }
    Ok(value)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetMode {
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSetSpec {
    pub m: usize,
    pub mode: SetMode,
    /// Midpoints per continuous dim in grid mode.
    pub bins: usize,
    pub seed: u64,
}

impl Default for EvalSetSpec {
    fn default() -> Self {
        Self {
            m: 10,
            mode: SetMode::Grid,
            bins: 3,
            seed: 1,
        }
    }
}

impl EvalSetSpec {
    pub fn mode_for(&self, family: Family) -> EvalMode {
        match self.mode {
            SetMode::Grid => EvalMode::grid_with_bins(&family.space(), self.bins),
            SetMode::Random => EvalMode::Random,
        }
    }
}

/// Fixed `[worst, best]` returns used to scale teacher states and reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub worst: f64,
    pub best: f64,
}

impl Bounds {
    pub fn for_family(family: Family) -> Self {
        match family {
            Family::Maze => Bounds { worst: -1.2, best: 1.0 },
            Family::Lander => Bounds {
                worst: -300.0,
                best: 100.0,
            },
        }
    }

    pub fn normalize(&self, x: f64) -> f64 {
        (x - self.worst) / (self.best - self.worst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub family: Family,
    pub teacher: TeacherKind,
    pub seed: u64,
    /// Teacher episodes (E).
    pub episodes: usize,
    /// Environments generated per episode (T).
    pub env_budget: usize,
    /// Student environment steps per generated environment (C).
    pub student_steps: usize,
    pub eval_episodes: usize,
    pub test_episodes: usize,
    /// Test-set evaluation cadence within an evaluated episode, in generated environments.
    pub test_every: usize,
    /// Evaluate on the test set in every episode rather than only the last.
    pub test_all_episodes: bool,
    pub psi: f64,
    pub real_capacity: usize,
    pub synthetic_capacity: usize,
    pub eval_set: EvalSetSpec,
    pub test_set: EvalSetSpec,
    pub reward: RewardConfig,
    pub agent: TeacherConfig,
    pub ppo: PpoConfig,
    pub diffusion: WorldModelConfig,
    pub levels: LevelBufferConfig,
    pub bounds: Option<Bounds>,
    /// Parallel evaluation and synthetic generation.
    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            family: Family::Maze,
            teacher: TeacherKind::Shed,
            seed: 0,
            episodes: 10,
            env_budget: 50,
            student_steps: 500,
            eval_episodes: 3,
            test_episodes: 3,
            test_every: 5,
            test_all_episodes: false,
            psi: 0.25,
            real_capacity: 100_000,
            synthetic_capacity: DEFAULT_SYNTHETIC_CAPACITY,
            eval_set: EvalSetSpec::default(),
            test_set: EvalSetSpec {
                m: 20,
                mode: SetMode::Random,
                bins: 3,
                seed: 2,
            },
            reward: RewardConfig::default(),
            agent: TeacherConfig::default(),
            ppo: PpoConfig {
                rollout_len: 250,
                ..PpoConfig::default()
            },
            diffusion: WorldModelConfig::default(),
            levels: LevelBufferConfig::default(),
            bounds: None,
            parallel: true,
        }
    }
}

impl RunConfig {
    /// Strict TOML parse: every unrecognised key is reported at once.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = parse_strict(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Toml(e.to_string()))
    }

    pub fn bounds(&self) -> Bounds {
        self.bounds.unwrap_or_else(|| Bounds::for_family(self.family))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if self.episodes == 0 || self.env_budget == 0 {
            return bad("episodes and env_budget must be at least 1".into());
        }
        if self.student_steps < self.ppo.minibatches {
            return bad(format!(
                "student_steps {} is smaller than one rollout of {} minibatches",
                self.student_steps, self.ppo.minibatches
            ));
        }
        if self.eval_episodes == 0 || self.test_episodes == 0 || self.test_every == 0 {
            return bad("eval_episodes, test_episodes and test_every must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.psi) {
            return bad(format!("psi must lie in [0, 1], got {}", self.psi));
        }
        if self.real_capacity == 0 || self.synthetic_capacity == 0 {
            return bad("buffer capacities must be positive".into());
        }
        if self.teacher.uses_agent() && self.eval_set.m < 2 {
            return bad("the fairness reward needs at least two evaluation environments".into());
        }
        let b = self.bounds();
        if !(b.best > b.worst) {
            return bad("bounds.best must exceed bounds.worst".into());
        }
        self.ppo.validate()?;
        self.reward.validate()?;
        self.agent.validate()?;
        self.diffusion.validate()?;
        self.levels.validate()?;
        Ok(())
    }

    /// Builds the evaluation set and a test set disjoint from it.
    pub fn build_sets(&self) -> Result<(EvalSet, EvalSet)> {
        let eval = build_eval_set(self.family, self.eval_set.m, self.eval_set.mode_for(self.family), self.eval_set.seed)?;
        let test = build_eval_set_excluding(
            self.family,
            self.test_set.m,
            self.test_set.mode_for(self.family),
            self.test_set.seed,
            &eval.params(),
        )?;
        ensure_disjoint(&self.family.space(), &eval.params(), &test.params())?;
        Ok((eval, test))
    }

    /// PPO rollouts run inside one environment.
    pub fn rollouts_per_env(&self) -> usize {
        let full = self.student_steps / self.ppo.rollout_len;
        let rest = self.student_steps % self.ppo.rollout_len;
        full + usize::from(rest >= self.ppo.minibatches)
    }

    pub fn expected_student_updates(&self) -> usize {
        self.episodes * self.env_budget * self.rollouts_per_env() * self.ppo.updates_per_env()
    }

    pub fn effective_psi(&self) -> f64 {
        if self.teacher == TeacherKind::HMdp {
            1.0
        } else {
            self.psi
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips_through_toml() {
        let c = RunConfig::default();
        let text = c.to_toml_string().unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), c);
    }

    #[test]
    fn unknown_keys_are_all_listed() {
        let text = "family = \"maze\"\nepisodez = 3\n[ppo]\nepochs = 2\nclip_ratio = 0.3\n[diffusion]\nsteps = 4\n";
        match RunConfig::from_toml_str(text) {
            Err(Error::UnknownKeys(keys)) => {
                assert_eq!(keys.len(), 3);
                assert!(keys.contains(&"episodez".to_string()));
                assert!(keys.contains(&"ppo.clip_ratio".to_string()));
                assert!(keys.contains(&"diffusion.steps".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = RunConfig::from_toml_str("teacher = \"accel-edit\"\nfamily = \"lander\"\n[eval_set]\nm = 6\n").unwrap();
        assert_eq!(c.teacher, TeacherKind::AccelEdit);
        assert_eq!(c.family, Family::Lander);
        assert_eq!(c.eval_set.m, 6);
        assert_eq!(c.eval_set.bins, 3);
        assert_eq!(c.psi, 0.25);
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(RunConfig::from_toml_str("episodes = 0").is_err());
        assert!(RunConfig::from_toml_str("psi = 1.5").is_err());
        assert!(RunConfig::from_toml_str("[ppo]\nclip = 1.0").is_err());
        assert!(RunConfig::from_toml_str("[reward]\neta = -1.0").is_err());
    }

    #[test]
    fn update_arithmetic() {
        let c = RunConfig {
            episodes: 10,
            env_budget: 50,
            student_steps: 500,
            ..RunConfig::default()
        };
        assert_eq!(c.rollouts_per_env(), 2);
        assert_eq!(c.expected_student_updates(), 10 * 50 * 2 * 20);
        let one = RunConfig {
            episodes: 1,
            student_steps: 250,
            ..RunConfig::default()
        };
        // one rollout per environment: 50 x 4 x 5
        assert_eq!(one.expected_student_updates(), 1000);
    }

    #[test]
    fn sets_are_disjoint() {
        for family in [Family::Maze, Family::Lander] {
            let c = RunConfig {
                family,
                ..RunConfig::default()
            };
            let (eval, test) = c.build_sets().unwrap();
            assert_eq!(eval.len(), 10);
            assert_eq!(test.len(), 20);
        }
    }

    #[test]
    fn hash_tracks_content() {
        let a = RunConfig::default();
        let b = RunConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
