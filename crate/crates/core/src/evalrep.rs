//! Fixed evaluation sets that turn a policy into a performance vector, and
//! the interval-grid machinery behind them.

use std::collections::HashSet;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::env::{make_env, sample_params, DimKind, Family, ParamSpace, ParamVector};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::rng::{derive_seed, seeded, Rng};
use crate::student::{run_greedy_episode, GreedyPolicy};

/// Minimum L-infinity separation, relative to each continuous range, for two
/// parameter vectors to count as different environments.
pub const DISJOINT_REL_SEP: f64 = 1e-3;
pub const DEFAULT_EPISODES_PER_ENV: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridDim {
    pub delta: f64,
    pub lo: f64,
    pub hi: f64,
    pub midpoints: Vec<f64>,
    pub discrete: bool,
}

impl GridDim {
    /// Intervals of radius `delta` around each midpoint.
    pub fn intervals(&self) -> Vec<(f64, f64)> {
        self.midpoints.iter().map(|m| (m - self.delta, m + self.delta)).collect()
    }

    fn nearest(&self, v: f64) -> usize {
        let i = self.midpoints.partition_point(|&m| m < v);
        match i {
            0 => 0,
            i if i == self.midpoints.len() => i - 1,
            i => {
                if v - self.midpoints[i - 1] <= self.midpoints[i] - v {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalGrid {
    dims: Vec<GridDim>,
}

pub fn build_interval_grid(space: &ParamSpace, deltas: &[f64]) -> Result<IntervalGrid> {
    if deltas.len() != space.len() {
        return Err(Error::Shape {
            expected: space.len(),
            got: deltas.len(),
        });
    }
    let mut dims = Vec::with_capacity(space.len());
    for (i, (dim, &delta)) in space.dims().iter().zip(deltas).enumerate() {
        if !(delta > 0.0 && delta.is_finite()) || (!dim.is_discrete() && delta > dim.range()) {
            return Err(Error::InvalidDelta { dim: i, value: delta });
        }
        dims.push(match &dim.kind {
            DimKind::Continuous { lo, hi } => {
                let count = ((hi - lo) / delta - 1e-9).ceil().max(1.0) as usize;
                let mut midpoints: Vec<f64> =
                    (1..=count).map(|j| lo + (2 * j - 1) as f64 / 2.0 * delta).collect();
                let last = midpoints.last_mut().unwrap();
                *last = last.min(hi - delta / 2.0);
                GridDim {
                    delta,
                    lo: *lo,
                    hi: *hi,
                    midpoints,
                    discrete: false,
                }
            }
            DimKind::Discrete { levels } => {
                let mut midpoints = levels.clone();
                midpoints.sort_by(f64::total_cmp);
                GridDim {
                    delta,
                    lo: midpoints[0],
                    hi: *midpoints.last().unwrap(),
                    midpoints,
                    discrete: true,
                }
            }
        });
    }
    Ok(IntervalGrid { dims })
}

impl IntervalGrid {
    pub fn dims(&self) -> &[GridDim] {
        &self.dims
    }

    pub fn deltas(&self) -> Vec<f64> {
        self.dims.iter().map(|d| d.delta).collect()
    }

    /// Number of midpoint combinations, saturating.
    pub fn combinations(&self) -> u128 {
        self.dims
            .iter()
            .fold(1u128, |acc, d| acc.saturating_mul(d.midpoints.len() as u128))
    }

    /// Mixed-radix decoding of a combination index.
    pub fn combination(&self, mut index: u128) -> ParamVector {
        let mut values = Vec::with_capacity(self.dims.len());
        for d in self.dims.iter().rev() {
            let n = d.midpoints.len() as u128;
            values.push(d.midpoints[(index % n) as usize]);
            index /= n;
        }
        values.reverse();
        ParamVector::new(values)
    }

    pub fn is_midpoint(&self, p: &ParamVector) -> bool {
        p.len() == self.dims.len() && self.dims.iter().zip(p.values()).all(|(d, v)| d.midpoints.contains(v))
    }

    /// The midpoint combination whose intervals contain `probe`.
    pub fn covering(&self, probe: &ParamVector) -> Result<ParamVector> {
        if probe.len() != self.dims.len() {
            return Err(Error::Shape {
                expected: self.dims.len(),
                got: probe.len(),
            });
        }
        let mut out = Vec::with_capacity(self.dims.len());
        for (d, &v) in self.dims.iter().zip(probe.values()) {
            let m = d.midpoints[d.nearest(v)];
            let inside = if d.discrete {
                m == v
            } else {
                v >= d.lo && v <= d.hi && (v - m).abs() <= d.delta
            };
            if !inside {
                return Err(Error::CoverageViolation {
                    probe: probe.values().to_vec(),
                });
            }
            out.push(m);
        }
        Ok(ParamVector::new(out))
    }

    fn sample_probe(&self, rng: &mut Rng) -> ParamVector {
        ParamVector::new(
            self.dims
                .iter()
                .map(|d| {
                    if d.discrete {
                        d.midpoints[rng.random_range(0..d.midpoints.len())]
                    } else {
                        rng.random_range(d.lo..=d.hi)
                    }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum EvalMode {
    /// Midpoint combinations of an interval grid with the given spacings.
    Grid { deltas: Vec<f64> },
    Random,
    /// Hand-specified rows.
    Explicit,
}

impl EvalMode {
    /// Grid mode with `bins` midpoints per continuous dim.
    pub fn grid_with_bins(space: &ParamSpace, bins: usize) -> Self {
        let deltas = space
            .dims()
            .iter()
            .map(|d| if d.is_discrete() { 1.0 } else { d.range() / bins.max(1) as f64 })
            .collect();
        EvalMode::Grid { deltas }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalEntry {
    pub params: ParamVector,
    /// Instance seed fixing everything the parameters leave open (maze layout).
    pub seed: u64,
}

/// Ordered, immutable list of evaluation environments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSet {
    family: Family,
    mode: EvalMode,
    seed: u64,
    entries: Vec<EvalEntry>,
}

pub fn build_eval_set(family: Family, m: usize, mode: EvalMode, seed: u64) -> Result<EvalSet> {
    build_eval_set_excluding(family, m, mode, seed, &[])
}

/// Like [`build_eval_set`] but never emits a parameter vector that coincides
/// with one in `exclude`.
pub fn build_eval_set_excluding(
    family: Family,
    m: usize,
    mode: EvalMode,
    seed: u64,
    exclude: &[ParamVector],
) -> Result<EvalSet> {
    if m == 0 {
        return Err(Error::Config("an evaluation set needs at least one environment".into()));
    }
    let space = family.space();
    let mut rng = seeded(derive_seed(seed, "eval-set", 0));
    let clashes = |p: &ParamVector, taken: &[ParamVector]| {
        exclude.iter().chain(taken).any(|q| space.coincide(p, q, DISJOINT_REL_SEP))
    };
    let mut rows: Vec<ParamVector> = Vec::with_capacity(m);
    match &mode {
        EvalMode::Grid { deltas } => {
            let grid = build_interval_grid(&space, deltas)?;
            let total = grid.combinations();
            let allowed: u128 = if total <= 1 << 24 {
                (0..total).filter(|&i| !clashes(&grid.combination(i), &[])).count() as u128
            } else {
                total
            };
            if (m as u128) > allowed {
                return Err(Error::TooManyEnvironments {
                    requested: m,
                    available: allowed.min(usize::MAX as u128) as usize,
                });
            }
            if total <= 1 << 24 {
                let pool: Vec<u128> = (0..total).filter(|&i| !clashes(&grid.combination(i), &[])).collect();
                for i in rand::seq::index::sample(&mut rng, pool.len(), m) {
                    rows.push(grid.combination(pool[i]));
                }
            } else {
                let mut seen = HashSet::new();
                while rows.len() < m {
                    let idx = rng.random_range(0..total);
                    let p = grid.combination(idx);
                    if !clashes(&p, &[]) && seen.insert(idx) {
                        rows.push(p);
                    }
                }
            }
        }
        EvalMode::Random => {
            let mut attempts = 0;
            while rows.len() < m {
                attempts += 1;
                if attempts > 1000 * m {
                    return Err(Error::TooManyEnvironments {
                        requested: m,
                        available: rows.len(),
                    });
                }
                let p = sample_params(&space, &mut rng);
                if !clashes(&p, &rows) {
                    rows.push(p);
                }
            }
        }
        EvalMode::Explicit => {
            return Err(Error::Config("explicit evaluation sets are built with EvalSet::explicit".into()));
        }
    }
    let entries = rows
        .into_iter()
        .enumerate()
        .map(|(i, params)| EvalEntry {
            params,
            seed: derive_seed(seed, "eval-instance", i as u64),
        })
        .collect();
    Ok(EvalSet {
        family,
        mode,
        seed,
        entries,
    })
}

impl EvalSet {
    pub fn explicit(family: Family, entries: Vec<EvalEntry>) -> Result<Self> {
        let space = family.space();
        for e in &entries {
            space.validate(&e.params)?;
        }
        if entries.is_empty() {
            return Err(Error::Config("an evaluation set needs at least one environment".into()));
        }
        Ok(Self {
            family,
            mode: EvalMode::Explicit,
            seed: 0,
            entries,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn mode(&self) -> &EvalMode {
        &self.mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn entries(&self) -> &[EvalEntry] {
        &self.entries
    }

    pub fn params(&self) -> Vec<ParamVector> {
        self.entries.iter().map(|e| e.params.clone()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A new set holding `self`'s entries in the order `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            entries: perm.iter().map(|&i| self.entries[i].clone()).collect(),
            ..self.clone()
        }
    }

    /// True when `(params, seed)` names one of this set's environments.
    pub fn contains_env(&self, params: &ParamVector, seed: u64) -> bool {
        let space = self.family.space();
        self.entries
            .iter()
            .any(|e| e.seed == seed && space.coincide(&e.params, params, DISJOINT_REL_SEP))
    }
}

/// Errors unless no vector of `a` coincides with one of `b`.
pub fn ensure_disjoint(space: &ParamSpace, a: &[ParamVector], b: &[ParamVector]) -> Result<()> {
    for p in a {
        if let Some(q) = b.iter().find(|q| space.coincide(p, q, DISJOINT_REL_SEP)) {
            return Err(Error::Disjointness(format!("{:?} coincides with {:?}", p.values(), q.values())));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfVector {
    pub values: Vec<f64>,
    pub episodes: usize,
}

impl PerfVector {
    pub fn new(values: Vec<f64>, episodes: usize) -> Self {
        Self { values, episodes }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean greedy return on each evaluation environment, in set order.
pub fn perf_vector<P: GreedyPolicy + ?Sized>(
    policy: &P,
    set: &EvalSet,
    episodes_per_env: usize,
    seed: u64,
    exec: Exec,
) -> Result<PerfVector> {
    assert!(episodes_per_env >= 1, "episodes_per_env must be at least 1");
    let values = exec.try_map_indexed(set.len(), |i| {
        let entry = &set.entries[i];
        let mut env = make_env(set.family, &entry.params, entry.seed)?;
        let mut total = 0.0;
        for e in 0..episodes_per_env {
            let reset = derive_seed(seed ^ entry.seed, "perf-episode", e as u64);
            total += run_greedy_episode(policy, &mut env, reset)?;
        }
        Ok::<_, Error>(total / episodes_per_env as f64)
    })?;
    Ok(PerfVector::new(values, episodes_per_env))
}

/// Largest `|f(probe) - f(covering midpoint)|` over `probe_count` uniform probes.
pub fn verify_representation_bound<F>(perf_fn: F, grid: &IntervalGrid, probe_count: usize, rng: &mut Rng) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut worst: f64 = 0.0;
    for _ in 0..probe_count {
        let probe = grid.sample_probe(rng);
        let mid = grid.covering(&probe)?;
        worst = worst.max((perf_fn(probe.values()) - perf_fn(mid.values())).abs());
    }
    Ok(worst)
}
