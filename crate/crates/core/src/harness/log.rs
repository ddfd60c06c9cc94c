//! Line-delimited run log. The first line is a header; every later line is
//! one event. No wall-clock fields are recorded, so two runs of the same
//! config and seed serialize identically.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{Provenance, TeacherKind};
use crate::error::{Error, Result};
use crate::evalrep::EvalEntry;
use crate::harness::config::RunConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub config_hash: String,
    pub config: RunConfig,
    pub eval_set: Vec<EvalEntry>,
    pub test_set: Vec<EvalEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum RunEvent {
    EpisodeStart {
        episode: usize,
    },
    /// Fresh student's raw performance vector and the normalized teacher state.
    InitialState {
        episode: usize,
        perf: Vec<f64>,
        state: Vec<f64>,
    },
    EnvGenerated {
        episode: usize,
        step: usize,
        params: Vec<f64>,
        instance_seed: u64,
        teacher: TeacherKind,
        provenance: Provenance,
    },
    StudentTrained {
        episode: usize,
        step: usize,
        env_steps: usize,
        updates: usize,
        episodes: usize,
        mean_episode_return: Option<f64>,
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
        regret_proxy: f64,
    },
    PerfSnapshot {
        episode: usize,
        step: usize,
        perf: Vec<f64>,
    },
    TeacherReward {
        episode: usize,
        step: usize,
        reward: f64,
    },
    WorldModelTrained {
        episode: usize,
        step: usize,
        loss: f64,
    },
    SyntheticGenerated {
        episode: usize,
        step: usize,
        count: usize,
    },
    TeacherUpdate {
        episode: usize,
        step: usize,
        critic_loss: f64,
        actor_loss: f64,
        real: usize,
        synthetic: usize,
    },
    /// Zero-shot returns on the held-out test set. `environments` counts
    /// environments generated so far in this episode.
    TestEval {
        episode: usize,
        environments: usize,
        returns: Vec<f64>,
        mean: f64,
    },
    LevelBufferReset {
        episode: usize,
        cleared: usize,
    },
    Checkpoint {
        episode: usize,
        file: String,
        sha256: String,
    },
    RunEnd {
        environments: usize,
        student_updates: usize,
        student_steps: usize,
        synthetic_transitions: usize,
    },
}

impl RunEvent {
    pub fn kind(&self) -> &'static str {
        match self {
            RunEvent::EpisodeStart { .. } => "episode_start",
            RunEvent::InitialState { .. } => "initial_state",
            RunEvent::EnvGenerated { .. } => "env_generated",
            RunEvent::StudentTrained { .. } => "student_trained",
            RunEvent::PerfSnapshot { .. } => "perf_snapshot",
            RunEvent::TeacherReward { .. } => "teacher_reward",
            RunEvent::WorldModelTrained { .. } => "world_model_trained",
            RunEvent::SyntheticGenerated { .. } => "synthetic_generated",
            RunEvent::TeacherUpdate { .. } => "teacher_update",
            RunEvent::TestEval { .. } => "test_eval",
            RunEvent::LevelBufferReset { .. } => "level_buffer_reset",
            RunEvent::Checkpoint { .. } => "checkpoint",
            RunEvent::RunEnd { .. } => "run_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub header: LogHeader,
    pub events: Vec<RunEvent>,
}

impl RunLog {
    pub fn new(header: LogHeader) -> Self {
        Self {
            header,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, event: RunEvent) {
        self.events.push(event);
    }

    pub fn generated(&self) -> impl Iterator<Item = &RunEvent> {
        self.events
            .iter()
            .filter(|e| matches!(e, RunEvent::EnvGenerated { .. }))
    }

    pub fn test_evals(&self) -> impl Iterator<Item = (usize, usize, &[f64], f64)> {
        self.events.iter().filter_map(|e| match e {
            RunEvent::TestEval {
                episode,
                environments,
                returns,
                mean,
            } => Some((*episode, *environments, returns.as_slice(), *mean)),
            _ => None,
        })
    }

    /// Mean test return of the last evaluation in the final episode.
    pub fn final_test_mean(&self) -> Option<f64> {
        self.test_evals().last().map(|(_, _, _, m)| m)
    }

    pub fn end(&self) -> Option<&RunEvent> {
        self.events
            .iter()
            .rev()
            .find(|e| matches!(e, RunEvent::RunEnd { .. }))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::IncompatibleLogs("empty log".into()))??;
        let header: LogHeader = serde_json::from_str(&first)?;
        if header.schema_version != SCHEMA_VERSION {
            return Err(Error::IncompatibleLogs(format!(
                "schema version {} (expected {SCHEMA_VERSION})",
                header.schema_version
            )));
        }
        let mut events = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            events.push(serde_json::from_str(&line)?);
        }
        Ok(Self { header, events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> RunLog {
        let config = RunConfig::default();
        let mut log = RunLog::new(LogHeader {
            schema_version: SCHEMA_VERSION,
            config_hash: config.hash(),
            config,
            eval_set: Vec::new(),
            test_set: Vec::new(),
        });
        log.push(RunEvent::EpisodeStart { episode: 0 });
        log.push(RunEvent::EnvGenerated {
            episode: 0,
            step: 0,
            params: vec![0.1, 2.0],
            instance_seed: u64::MAX,
            teacher: TeacherKind::Accel,
            provenance: Provenance::ReplayedMutated { source: 3 },
        });
        log.push(RunEvent::TestEval {
            episode: 0,
            environments: 1,
            returns: vec![0.5, -0.25],
            mean: 0.125,
        });
        log
    }

    #[test]
    fn jsonl_round_trip() {
        let log = sample_log();
        let text = log.to_jsonl();
        assert_eq!(text.lines().count(), 4);
        let back = RunLog::read_from(text.as_bytes()).unwrap();
        assert_eq!(back, log);
        assert_eq!(back.to_jsonl(), text);
        assert_eq!(back.final_test_mean(), Some(0.125));
    }

    #[test]
    fn events_are_tagged() {
        let text = sample_log().to_jsonl();
        let line = text.lines().nth(2).unwrap();
        assert!(line.starts_with("{\"event\":\"env_generated\""));
        assert!(line.contains("\"kind\":\"replayed_mutated\""));
    }

    #[test]
    fn schema_mismatch_rejected() {
        let mut log = sample_log();
        log.header.schema_version = 99;
        assert!(matches!(
            RunLog::read_from(log.to_jsonl().as_bytes()),
            Err(Error::IncompatibleLogs(_))
        ));
    }
}
