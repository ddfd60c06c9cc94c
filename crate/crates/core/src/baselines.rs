//! Reference teachers: domain randomization and level replay with mutation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{mutate_params, sample_params, ParamSpace, ParamVector};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::student::{compute_gae, RolloutBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TeacherKind {
    #[serde(rename = "shed")]
    Shed,
    #[serde(rename = "h-mdp")]
    HMdp,
    #[serde(rename = "dr")]
    Dr,
    #[serde(rename = "accel")]
    Accel,
    #[serde(rename = "accel-edit")]
    AccelEdit,
}

impl TeacherKind {
    pub const ALL: [TeacherKind; 5] = [
        TeacherKind::Shed,
        TeacherKind::HMdp,
        TeacherKind::Dr,
        TeacherKind::Accel,
        TeacherKind::AccelEdit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TeacherKind::Shed => "shed",
            TeacherKind::HMdp => "h-mdp",
            TeacherKind::Dr => "dr",
            TeacherKind::Accel => "accel",
            TeacherKind::AccelEdit => "accel-edit",
        }
    }

    pub fn uses_level_buffer(self) -> bool {
        matches!(self, TeacherKind::Accel | TeacherKind::AccelEdit)
    }

    pub fn uses_agent(self) -> bool {
        matches!(self, TeacherKind::Shed | TeacherKind::HMdp)
    }
}

impl std::fmt::Display for TeacherKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for TeacherKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TeacherKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown teacher kind {s:?}")))
    }
}

pub fn dr_next(space: &ParamSpace, rng: &mut Rng) -> ParamVector {
    sample_params(space, rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelEntry {
    pub params: ParamVector,
    pub score: f64,
    pub visits: u64,
    pub inserted_episode: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LevelBufferConfig {
    pub capacity: usize,
    pub replay_prob: f64,
    pub temperature: f64,
    pub edit_strength: f64,
}

impl Default for LevelBufferConfig {
    fn default() -> Self {
        Self {
            capacity: 256,
            replay_prob: 0.5,
            temperature: 0.3,
            edit_strength: 0.1,
        }
    }
}

impl LevelBufferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0
            || !(0.0..=1.0).contains(&self.replay_prob)
            || !(self.temperature > 0.0)
            || !(self.edit_strength > 0.0)
        {
            return Err(Error::Config(
                "level buffer: capacity and temperature must be positive, replay_prob in [0, 1], edit_strength > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Score-ranked store of past training levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelBuffer {
    pub config: LevelBufferConfig,
    entries: Vec<LevelEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Provenance {
    Fresh,
    ReplayedMutated { source: usize },
    Teacher,
}

impl LevelBuffer {
    pub fn new(config: LevelBufferConfig) -> Self {
        Self {
            config,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[LevelEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Adds a level; at capacity the lowest-scoring entry gives way unless
    /// the newcomer scores lower still.
    pub fn insert(&mut self, params: ParamVector, score: f64, episode: usize) {
        debug_assert!(score.is_finite());
        let entry = LevelEntry {
            params,
            score,
            visits: 0,
            inserted_episode: episode,
        };
        if self.entries.len() < self.config.capacity {
            self.entries.push(entry);
            return;
        }
        let (worst, worst_score) = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (i, e.score))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if score > worst_score {
            self.entries[worst] = entry;
        }
    }

    /// Rank-based replay weights `(1/rank)^(1/T)`, normalised.
    pub fn replay_weights(&self) -> Vec<f64> {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| self.entries[b].score.total_cmp(&self.entries[a].score));
        let mut w = vec![0.0; self.entries.len()];
        for (rank, &i) in order.iter().enumerate() {
            w[i] = (1.0 / (rank + 1) as f64).powf(1.0 / self.config.temperature);
        }
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        w
    }

    pub fn pick(&self, rng: &mut Rng) -> Option<usize> {
        if self.entries.is_empty() {
            return None;
        }
        let w = self.replay_weights();
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in w.iter().enumerate() {
            acc += p;
            if u < acc {
                return Some(i);
            }
        }
        Some(w.len() - 1)
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// Next level: with probability `replay_prob` a mutation of a rank-sampled
/// buffer entry, otherwise a fresh uniform draw.
pub fn accel_next(buffer: &mut LevelBuffer, space: &ParamSpace, rng: &mut Rng) -> (ParamVector, Provenance) {
    let replay = !buffer.is_empty() && rng.random::<f64>() < buffer.config.replay_prob;
    if replay {
        let i = buffer.pick(rng).unwrap();
        buffer.entries[i].visits += 1;
        let child = mutate_params(space, &buffer.entries[i].params, rng, buffer.config.edit_strength);
        (child, Provenance::ReplayedMutated { source: i })
    } else {
        (sample_params(space, rng), Provenance::Fresh)
    }
}

/// Mean positive part of `returns - values`.
pub fn positive_value_loss(returns: &[f64], values: &[f64]) -> f64 {
    assert!(!returns.is_empty() && returns.len() == values.len());
    returns.iter().zip(values).map(|(r, v)| (r - v).max(0.0)).sum::<f64>() / returns.len() as f64
}

/// Regret proxy of a rollout: positive value loss of its GAE targets.
pub fn accel_score(batch: &RolloutBatch, gamma: f64, lambda: f64) -> f64 {
    let (_, returns) = compute_gae(batch, gamma, lambda);
    positive_value_loss(&returns, &batch.values)
}

/// Episode-boundary buffer policy: only the edit variant forgets.
pub fn reset_on_episode(buffer: &mut LevelBuffer, kind: TeacherKind) {
    if kind == TeacherKind::AccelEdit {
        buffer.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Dim, Family};
    use crate::rng::seeded;
    use proptest::prelude::*;

    #[test]
    fn dr_is_uniform_and_replayable() {
        let space = ParamSpace::new(vec![Dim::continuous("x", 0.0, 1.0)]).unwrap();
        let mut rng = seeded(0);
        let xs: Vec<f64> = (0..10_000).map(|_| dr_next(&space, &mut rng).values()[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        let lag1 = xs.windows(2).map(|w| (w[0] - mean) * (w[1] - mean)).sum::<f64>() / (xs.len() - 1) as f64 / var;
        assert!(lag1.abs() < 0.03, "{lag1}");
        let mut a = seeded(5);
        let mut b = seeded(5);
        for _ in 0..20 {
            assert_eq!(dr_next(&space, &mut a), dr_next(&space, &mut b));
        }
    }

    #[test]
    fn empty_buffer_is_always_fresh() {
        let space = Family::Lander.space();
        let mut buf = LevelBuffer::new(LevelBufferConfig {
            replay_prob: 1.0,
            ..LevelBufferConfig::default()
        });
        let mut rng = seeded(1);
        for _ in 0..100 {
            assert_eq!(accel_next(&mut buf, &space, &mut rng).1, Provenance::Fresh);
        }
    }

    #[test]
    fn single_entry_is_always_mutated() {
        let space = Family::Lander.space();
        let mut buf = LevelBuffer::new(LevelBufferConfig {
            replay_prob: 1.0,
            ..LevelBufferConfig::default()
        });
        let parent = ParamVector::new(vec![-7.0, 3.0, 1.0]);
        buf.insert(parent.clone(), 0.4, 0);
        let mut rng = seeded(2);
        for _ in 0..200 {
            let (child, prov) = accel_next(&mut buf, &space, &mut rng);
            assert_eq!(prov, Provenance::ReplayedMutated { source: 0 });
            space.validate(&child).unwrap();
            let moved = child.values().iter().zip(parent.values()).filter(|(a, b)| a != b).count();
            assert!(moved >= 1);
            for (c, p) in child.values().iter().zip(parent.values()) {
                assert!((c - p).abs() <= 0.1 * 10.0 + 1e-12);
            }
        }
        assert_eq!(buf.entries()[0].visits, 200);
    }

    #[test]
    fn highest_score_is_picked_most() {
        let mut buf = LevelBuffer::new(LevelBufferConfig::default());
        for (i, s) in [0.3, 2.0, 0.1, 1.2, 0.7].iter().enumerate() {
            buf.insert(ParamVector::new(vec![i as f64]), *s, 0);
        }
        let mut counts = [0usize; 5];
        let mut rng = seeded(3);
        for _ in 0..10_000 {
            counts[buf.pick(&mut rng).unwrap()] += 1;
        }
        let best = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
        assert_eq!(best, 1);
        // weights are (1/rank)^(1/0.3); ranks 1 and 2 dominate
        assert!(counts[1] > counts[3] && counts[3] > counts[4]);
    }

    #[test]
    fn capacity_keeps_the_best() {
        let mut buf = LevelBuffer::new(LevelBufferConfig {
            capacity: 3,
            ..LevelBufferConfig::default()
        });
        for (i, s) in [0.5, 0.1, 0.9, 0.3, 0.05].iter().enumerate() {
            buf.insert(ParamVector::new(vec![i as f64]), *s, 0);
        }
        let mut scores: Vec<f64> = buf.entries().iter().map(|e| e.score).collect();
        scores.sort_by(f64::total_cmp);
        assert_eq!(scores, vec![0.3, 0.5, 0.9]);
    }

    #[test]
    fn score_examples() {
        assert_eq!(positive_value_loss(&[1.0, -1.0, 2.0], &[0.0; 3]), 1.0);
        assert_eq!(positive_value_loss(&[0.4, -0.2], &[0.4, -0.2]), 0.0);
        let r = [0.5, 1.5, 0.25];
        assert_eq!(positive_value_loss(&r, &[0.0; 3]), r.iter().sum::<f64>() / 3.0);
    }

    #[test]
    fn perfect_critic_scores_zero() {
        // gamma = 1, lambda = 1, values equal to the realised suffix returns
        let rewards = [0.5, -0.25, 1.0, 0.0];
        let values: Vec<f64> = (0..4).map(|t| rewards[t..].iter().sum()).collect();
        let batch = RolloutBatch {
            observations: vec![vec![]; 4],
            actions: vec![vec![0.0]; 4],
            rewards: rewards.to_vec(),
            dones: vec![false, false, false, true],
            values,
            log_probs: vec![0.0; 4],
            last_value: 0.0,
            completed_returns: vec![],
        };
        assert!(accel_score(&batch, 1.0, 1.0).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn score_is_nonnegative(r in prop::collection::vec(-5.0..5.0f64, 1..30), seed in 0u64..1000) {
            let mut rng = seeded(seed);
            let values: Vec<f64> = r.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
            let n = r.len();
            let batch = RolloutBatch {
                observations: vec![vec![]; n],
                actions: vec![vec![0.0]; n],
                rewards: r,
                dones: (0..n).map(|i| i % 7 == 6).collect(),
                values,
                log_probs: vec![0.0; n],
                last_value: 0.3,
                completed_returns: vec![],
            };
            prop_assert!(accel_score(&batch, 0.99, 0.95) >= 0.0);
        }
    }

    #[test]
    fn episode_resets() {
        let mut buf = LevelBuffer::new(LevelBufferConfig::default());
        buf.insert(ParamVector::new(vec![1.0]), 1.0, 0);
        buf.insert(ParamVector::new(vec![2.0]), 0.5, 0);
        for kind in [TeacherKind::Accel, TeacherKind::Shed, TeacherKind::HMdp, TeacherKind::Dr] {
            reset_on_episode(&mut buf, kind);
            assert_eq!(buf.len(), 2);
        }
        reset_on_episode(&mut buf, TeacherKind::AccelEdit);
        assert!(buf.is_empty());
    }

    #[test]
    fn kind_names_round_trip() {
        for k in TeacherKind::ALL {
            assert_eq!(k.name().parse::<TeacherKind>().unwrap(), k);
            assert_eq!(serde_json::to_string(&k).unwrap(), format!("\"{}\"", k.name()));
        }
    }
}
