//! Underspecified environments: parameter spaces, the two desk-scale
//! families and the `make_env` / `step` / `reset` contract.

pub mod lander;
pub mod maze;

use rand::seq::index::sample as sample_indices;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

pub use lander::{LanderEnv, LanderParams};
pub use maze::{
    generate_maze, maze_feasible, Level, MazeEnv, MazeGrid, MazeParams, StartZone,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum DimKind {
    Continuous { lo: f64, hi: f64 },
    Discrete { levels: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    #[serde(flatten)]
    pub kind: DimKind,
}

impl Dim {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: DimKind::Continuous { lo, hi },
        }
    }

    pub fn discrete(name: &str, levels: &[f64]) -> Self {
        Self {
            name: name.to_string(),
            kind: DimKind::Discrete {
                levels: levels.to_vec(),
            },
        }
    }

    /// Width of the dim; for discrete dims the span of its level set.
    pub fn range(&self) -> f64 {
        match &self.kind {
            DimKind::Continuous { lo, hi } => hi - lo,
            DimKind::Discrete { levels } => {
                let (lo, hi) = min_max(levels);
                hi - lo
            }
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self.kind, DimKind::Discrete { .. })
    }

    pub fn contains(&self, v: f64) -> bool {
        match &self.kind {
            DimKind::Continuous { lo, hi } => v.is_finite() && v >= *lo && v <= *hi,
            DimKind::Discrete { levels } => levels.contains(&v),
        }
    }

    /// Maps `u` in [-1, 1] onto the dim; discrete dims snap to the nearest level.
    pub fn from_unit(&self, u: f64) -> f64 {
        let t = ((u.clamp(-1.0, 1.0) + 1.0) / 2.0).clamp(0.0, 1.0);
        match &self.kind {
            DimKind::Continuous { lo, hi } => (lo + t * (hi - lo)).clamp(*lo, *hi),
            DimKind::Discrete { levels } => {
                let idx = (t * (levels.len() - 1) as f64).round() as usize;
                levels[idx.min(levels.len() - 1)]
            }
        }
    }

    /// Inverse of `from_unit` for values inside the dim.
    pub fn to_unit(&self, v: f64) -> f64 {
        match &self.kind {
            DimKind::Continuous { lo, hi } => 2.0 * (v - lo) / (hi - lo) - 1.0,
            DimKind::Discrete { levels } => {
                if levels.len() == 1 {
                    return 0.0;
                }
                let idx = level_index(levels, v);
                2.0 * idx as f64 / (levels.len() - 1) as f64 - 1.0
            }
        }
    }
}

fn min_max(xs: &[f64]) -> (f64, f64) {
    xs.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

fn level_index(levels: &[f64], v: f64) -> usize {
    levels
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - v).abs().total_cmp(&(b.1 - v).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// The free parameters of an environment family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    dims: Vec<Dim>,
}

impl ParamSpace {
    pub fn new(dims: Vec<Dim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidSpace("a parameter space needs at least one dim".into()));
        }
        for d in &dims {
            match &d.kind {
                DimKind::Continuous { lo, hi } if !(lo < hi) || !lo.is_finite() || !hi.is_finite() => {
                    return Err(Error::InvalidSpace(format!(
                        "dim {} needs lower < upper, got [{lo}, {hi}]",
                        d.name
                    )))
                }
                DimKind::Discrete { levels } if levels.is_empty() => {
                    return Err(Error::InvalidSpace(format!("dim {} has no levels", d.name)))
                }
                DimKind::Discrete { levels } if levels.windows(2).any(|w| !(w[0] < w[1])) => {
                    return Err(Error::InvalidSpace(format!(
                        "dim {} levels must be strictly increasing",
                        d.name
                    )))
                }
                _ => {}
            }
        }
        Ok(Self { dims })
    }

    pub fn dims(&self) -> &[Dim] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn validate(&self, params: &ParamVector) -> Result<()> {
        if params.len() != self.len() {
            return Err(Error::Shape {
                expected: self.len(),
                got: params.len(),
            });
        }
        for (i, (d, &v)) in self.dims.iter().zip(params.values()).enumerate() {
            if !d.contains(v) {
                return Err(Error::InvalidParameter {
                    dim: i,
                    name: d.name.clone(),
                    reason: format!("value {v} outside {:?}", d.kind),
                });
            }
        }
        Ok(())
    }

    pub fn center(&self) -> ParamVector {
        ParamVector::new(self.dims.iter().map(|d| d.from_unit(0.0)).collect())
    }

    pub fn from_unit(&self, u: &[f64]) -> ParamVector {
        ParamVector::new(self.dims.iter().zip(u).map(|(d, &x)| d.from_unit(x)).collect())
    }

    pub fn to_unit(&self, p: &ParamVector) -> Vec<f64> {
        self.dims.iter().zip(p.values()).map(|(d, &v)| d.to_unit(v)).collect()
    }

    /// True when `a` and `b` count as the same environment parameters:
    /// exact equality on discrete dims and L-infinity distance below
    /// `rel_sep * range` on continuous dims.
    pub fn coincide(&self, a: &ParamVector, b: &ParamVector, rel_sep: f64) -> bool {
        self.dims.iter().zip(a.values().iter().zip(b.values())).all(|(d, (x, y))| {
            if d.is_discrete() {
                x == y
            } else {
                (x - y).abs() < rel_sep * d.range()
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector {
    values: Vec<f64>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self::new(values)
    }
}

/// Uniform over bounds (continuous) or level sets (discrete).
pub fn sample_params(space: &ParamSpace, rng: &mut Rng) -> ParamVector {
    ParamVector::new(
        space
            .dims()
            .iter()
            .map(|d| match &d.kind {
                DimKind::Continuous { lo, hi } => lo + rng.random::<f64>() * (hi - lo),
                DimKind::Discrete { levels } => levels[rng.random_range(0..levels.len())],
            })
            .collect(),
    )
}

/// Continuous perturbation by `offset`, clamped to the dim's bounds.
pub fn shift_continuous(dim: &Dim, value: f64, offset: f64) -> f64 {
    match &dim.kind {
        DimKind::Continuous { lo, hi } => (value + offset).clamp(*lo, *hi),
        DimKind::Discrete { .. } => value,
    }
}

/// Moves a discrete value `step` levels, saturating at either end.
pub fn step_level(dim: &Dim, value: f64, step: i64) -> f64 {
    match &dim.kind {
        DimKind::Discrete { levels } => {
            let idx = level_index(levels, value) as i64 + step;
            levels[idx.clamp(0, levels.len() as i64 - 1) as usize]
        }
        DimKind::Continuous { .. } => value,
    }
}

/// Random edit of a uniformly sized, uniformly chosen subset of dims.
pub fn mutate_params(
    space: &ParamSpace,
    params: &ParamVector,
    rng: &mut Rng,
    edit_strength: f64,
) -> ParamVector {
    debug_assert!(edit_strength > 0.0);
    let d = space.len();
    let k = rng.random_range(1..=d);
    let mut values = params.values().to_vec();
    for i in sample_indices(rng, d, k) {
        let dim = &space.dims()[i];
        values[i] = if dim.is_discrete() {
            step_level(dim, values[i], if rng.random::<bool>() { 1 } else { -1 })
        } else {
            let off = rng.random_range(-1.0..=1.0) * edit_strength * dim.range();
            shift_continuous(dim, values[i], off)
        };
    }
    ParamVector::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Lander,
    Maze,
}

impl Family {
    pub fn space(self) -> ParamSpace {
        match self {
            Family::Lander => lander::param_space(),
            Family::Maze => maze::param_space(),
        }
    }

    pub fn action_spec(self) -> ActionSpec {
        match self {
            Family::Lander => ActionSpec::Continuous(2),
            Family::Maze => ActionSpec::Discrete(4),
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Family::Lander => lander::OBS_DIM,
            Family::Maze => maze::OBS_DIM,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::Lander => "lander",
            Family::Maze => "maze",
        }
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lander" => Ok(Family::Lander),
            "maze" => Ok(Family::Maze),
            other => Err(Error::Config(format!("unknown family {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSpec {
    Discrete(usize),
    Continuous(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
    pub truncated: bool,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminal || self.truncated
    }
}

/// A concrete environment instance produced from a parameter vector.
#[derive(Debug, Clone)]
pub enum EnvInstance {
    Lander(LanderEnv),
    Maze(MazeEnv),
}

pub fn make_env(family: Family, params: &ParamVector, seed: u64) -> Result<EnvInstance> {
    family.space().validate(params)?;
    Ok(match family {
        Family::Lander => {
            EnvInstance::Lander(LanderEnv::new(LanderParams::from_vector(params)?, seed))
        }
        Family::Maze => EnvInstance::Maze(MazeEnv::from_params(MazeParams::from_vector(params)?, seed)?),
    })
}

impl EnvInstance {
    pub fn family(&self) -> Family {
        match self {
            EnvInstance::Lander(_) => Family::Lander,
            EnvInstance::Maze(_) => Family::Maze,
        }
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        match self {
            EnvInstance::Lander(e) => e.step(action),
            EnvInstance::Maze(e) => e.step(action),
        }
    }

    pub fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            EnvInstance::Lander(e) => e.reset(seed),
            EnvInstance::Maze(e) => e.reset(seed),
        }
    }

    pub fn observation(&self) -> Vec<f64> {
        match self {
            EnvInstance::Lander(e) => e.observation(),
            EnvInstance::Maze(e) => e.observation(),
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            EnvInstance::Lander(e) => e.steps(),
            EnvInstance::Maze(e) => e.steps(),
        }
    }

    pub fn horizon(&self) -> usize {
        match self {
            EnvInstance::Lander(e) => e.horizon(),
            EnvInstance::Maze(e) => e.horizon(),
        }
    }

    pub fn is_done(&self) -> bool {
        match self {
            EnvInstance::Lander(e) => e.is_done(),
            EnvInstance::Maze(e) => e.is_done(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn continuous_sampling_is_uniform() {
        let space = ParamSpace::new(vec![Dim::continuous("x", 0.0, 1.0)]).unwrap();
        let mut rng = seeded(11);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| sample_params(&space, &mut rng).values()[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn discrete_sampling_is_uniform() {
        let space = ParamSpace::new(vec![Dim::discrete("lvl", &[0.0, 1.0, 2.0])]).unwrap();
        let mut rng = seeded(12);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample_params(&space, &mut rng).values()[0] as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.02);
        }
    }

    #[test]
    fn degenerate_bounds_rejected() {
        assert!(ParamSpace::new(vec![Dim::continuous("x", 0.5, 0.5)]).is_err());
        assert!(ParamSpace::new(vec![Dim::discrete("x", &[])]).is_err());
        assert!(ParamSpace::new(vec![]).is_err());
    }

    #[test]
    fn vanishing_edit_strength_leaves_continuous_dims() {
        let space = Family::Lander.space();
        let mut rng = seeded(3);
        let p = sample_params(&space, &mut rng);
        let q = mutate_params(&space, &p, &mut rng, 1e-300);
        for (a, b) in p.values().iter().zip(q.values()) {
            assert!((a - b).abs() < 1e-250);
        }
    }

    #[test]
    fn clamp_and_saturate() {
        let c = Dim::continuous("x", 0.0, 1.0);
        assert_eq!(shift_continuous(&c, 1.0, 0.3), 1.0);
        let d = Dim::discrete("lvl", &[0.0, 1.0, 2.0]);
        assert_eq!(step_level(&d, 2.0, 1), 2.0);
        assert_eq!(step_level(&d, 0.0, -1), 0.0);
        assert_eq!(step_level(&d, 1.0, 1), 2.0);
    }

    #[test]
    fn unit_mapping_round_trips_and_snaps() {
        let space = Family::Maze.space();
        let p = ParamVector::new(vec![2.0, 0.0, 1.0, 4.0]);
        assert_eq!(space.from_unit(&space.to_unit(&p)), p);
        let center = space.center();
        assert_eq!(center.values(), &[1.0, 1.0, 1.0, 3.0]);
        let lander = Family::Lander.space();
        let c = lander.center();
        for (d, v) in lander.dims().iter().zip(c.values()) {
            if let DimKind::Continuous { lo, hi } = d.kind {
                assert!((v - (lo + hi) / 2.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn invalid_parameter_names_dim() {
        let err = make_env(Family::Lander, &ParamVector::new(vec![5.0, 0.0, 0.0]), 0).unwrap_err();
        match err {
            Error::InvalidParameter { dim, name, .. } => {
                assert_eq!(dim, 0);
                assert_eq!(name, "gravity");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(10_000))]
        #[test]
        fn mutation_stays_in_space(seed in 0u64..u64::MAX, strength in 1e-6f64..2.0, maze in proptest::bool::ANY) {
            let space = if maze { Family::Maze.space() } else { Family::Lander.space() };
            let mut rng = seeded(seed);
            let p = sample_params(&space, &mut rng);
            let q = mutate_params(&space, &p, &mut rng, strength);
            proptest::prop_assert!(space.validate(&q).is_ok());
        }
    }
}
