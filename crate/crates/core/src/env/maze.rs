//! Grid mazes: difficulty-bracketed procedural generation, feasibility
//! checking and the egocentric navigation task.
//!
//! Cell encoding: -1 block, 0 open, 1 start, 2 end.

use std::collections::VecDeque;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{Action, Dim, ParamSpace, ParamVector, StepResult};
use crate::error::{Error, Result};
use crate::rng::{seeded, Rng};

pub const BLOCK: i8 = -1;
pub const OPEN: i8 = 0;
pub const START: i8 = 1;
pub const END: i8 = 2;

pub const OBS_DIM: usize = 11;
pub const GOAL_REWARD: f64 = 1.0;
pub const STEP_COST: f64 = -0.01;
pub const MAX_RETRIES: usize = 500;

// up, right, down, left; BFS expands neighbours in this order
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

pub fn param_space() -> ParamSpace {
    ParamSpace::new(vec![
        Dim::discrete("size_level", &[0.0, 1.0, 2.0]),
        Dim::discrete("structure_level", &[0.0, 1.0, 2.0]),
        Dim::discrete("goal_level", &[0.0, 1.0, 2.0]),
        Dim::discrete("start_level", &[1.0, 2.0, 3.0, 4.0, 5.0]),
    ])
    .expect("static maze space")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Easy,
    Medium,
    Hard,
}

impl Level {
    pub fn from_index(i: usize) -> Option<Self> {
        [Level::Easy, Level::Medium, Level::Hard].get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Inclusive side-length range: <=7x7, above 7x7 and below 10x10, above 10x10
    /// and below 15x15. Sides start at 5 since mazes should exceed 4x4.
    pub fn side_range(self) -> (usize, usize) {
        match self {
            Level::Easy => (5, 7),
            Level::Medium => (8, 9),
            Level::Hard => (11, 14),
        }
    }

    /// Inclusive bounds on turns along the shortest start-end path.
    pub fn turn_range(self) -> (usize, usize) {
        match self {
            Level::Easy => (0, 1),
            Level::Medium => (2, 3),
            Level::Hard => (4, usize::MAX),
        }
    }

    /// Inclusive bounds on the shortest start-end path length in moves.
    pub fn steps_range(self) -> (usize, usize) {
        match self {
            Level::Easy => (1, 4),
            Level::Medium => (5, 10),
            Level::Hard => (11, usize::MAX),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartZone {
    TopLeft = 1,
    TopRight = 2,
    BottomLeft = 3,
    BottomRight = 4,
    Center = 5,
}

impl StartZone {
    pub fn from_level(level: u8) -> Option<Self> {
        match level {
            1 => Some(StartZone::TopLeft),
            2 => Some(StartZone::TopRight),
            3 => Some(StartZone::BottomLeft),
            4 => Some(StartZone::BottomRight),
            5 => Some(StartZone::Center),
            _ => None,
        }
    }

    pub fn anchor(self, height: usize, width: usize) -> (usize, usize) {
        match self {
            StartZone::TopLeft => (0, 0),
            StartZone::TopRight => (0, width - 1),
            StartZone::BottomLeft => (height - 1, 0),
            StartZone::BottomRight => (height - 1, width - 1),
            StartZone::Center => (height / 2, width / 2),
        }
    }

    /// Chebyshev radius `ceil(side / 4)` around the zone anchor.
    pub fn contains(self, height: usize, width: usize, cell: (usize, usize)) -> bool {
        let (ar, ac) = self.anchor(height, width);
        let radius = height.max(width).div_ceil(4);
        cell.0.abs_diff(ar).max(cell.1.abs_diff(ac)) <= radius
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MazeParams {
    pub size: Level,
    pub structure: Level,
    pub goal: Level,
    pub start: StartZone,
}

impl MazeParams {
    pub fn new(size: Level, structure: Level, goal: Level, start: StartZone) -> Self {
        Self {
            size,
            structure,
            goal,
            start,
        }
    }

    pub fn from_vector(p: &ParamVector) -> Result<Self> {
        let v = p.values();
        if v.len() != 4 {
            return Err(Error::Shape {
                expected: 4,
                got: v.len(),
            });
        }
        let names = ["size_level", "structure_level", "goal_level"];
        let mut levels = [Level::Easy; 3];
        for i in 0..3 {
            levels[i] = (v[i].fract() == 0.0 && v[i] >= 0.0)
                .then(|| Level::from_index(v[i] as usize))
                .flatten()
                .ok_or_else(|| Error::InvalidParameter {
                    dim: i,
                    name: names[i].into(),
                    reason: format!("{} is not a level index", v[i]),
                })?;
        }
        let start = (v[3].fract() == 0.0 && v[3] >= 0.0)
            .then(|| StartZone::from_level(v[3] as u8))
            .flatten()
            .ok_or_else(|| Error::InvalidParameter {
                dim: 3,
                name: "start_level".into(),
                reason: format!("{} is not in 1..=5", v[3]),
            })?;
        Ok(Self::new(levels[0], levels[1], levels[2], start))
    }

    pub fn to_vector(&self) -> ParamVector {
        ParamVector::new(vec![
            self.size.index() as f64,
            self.structure.index() as f64,
            self.goal.index() as f64,
            self.start as u8 as f64,
        ])
    }

    /// False for turn and length brackets no path can satisfy together. A path
    /// of `n` moves has at most `n - 1` turns, and
    /// A path with at most one turn from a start cell reaches at most
    /// `max(r, side-1-r) + max(c, side-1-c)` moves.
    pub fn brackets_compatible(&self) -> bool {
        let (min_steps, max_steps) = self.goal.steps_range();
        let (min_turns, max_turns) = self.structure.turn_range();
        if max_steps != usize::MAX && min_turns >= max_steps {
            return false;
        }
        if max_turns <= 1 {
            let side = self.size.side_range().1;
            let reach = (0..side)
                .flat_map(|r| (0..side).map(move |c| (r, c)))
                .filter(|&cell| self.start.contains(side, side, cell))
                .map(|(r, c)| r.max(side - 1 - r) + c.max(side - 1 - c))
                .max()
                .unwrap_or(0);
            return reach >= min_steps;
        }
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<i8>>", into = "Vec<Vec<i8>>")]
pub struct MazeGrid {
    cells: Vec<Vec<i8>>,
}

impl TryFrom<Vec<Vec<i8>>> for MazeGrid {
    type Error = Error;

    fn try_from(cells: Vec<Vec<i8>>) -> Result<Self> {
        MazeGrid::new(cells)
    }
}

impl From<MazeGrid> for Vec<Vec<i8>> {
    fn from(g: MazeGrid) -> Self {
        g.cells
    }
}

impl MazeGrid {
    /// Rectangular grid with values in {-1, 0, 1, 2}. Start/end multiplicity is
    /// checked by `maze_feasible`, not here.
    pub fn new(cells: Vec<Vec<i8>>) -> Result<Self> {
        let width = cells.first().map_or(0, Vec::len);
        if cells.is_empty() || width == 0 {
            return Err(Error::MalformedGrid("empty grid".into()));
        }
        if cells.iter().any(|r| r.len() != width) {
            return Err(Error::MalformedGrid("rows have different lengths".into()));
        }
        if let Some(v) = cells.iter().flatten().find(|v| !(-1..=2).contains(*v)) {
            return Err(Error::MalformedGrid(format!("cell value {v} not in -1..=2")));
        }
        Ok(Self { cells })
    }

    pub fn height(&self) -> usize {
        self.cells.len()
    }

    pub fn width(&self) -> usize {
        self.cells[0].len()
    }

    pub fn cells(&self) -> &[Vec<i8>] {
        &self.cells
    }

    pub fn get(&self, r: isize, c: isize) -> Option<i8> {
        if r < 0 || c < 0 {
            return None;
        }
        self.cells.get(r as usize)?.get(c as usize).copied()
    }

    fn find_unique(&self, value: i8) -> Result<(usize, usize)> {
        let mut found = None;
        for (r, row) in self.cells.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v == value {
                    if found.is_some() {
                        return Err(Error::MalformedGrid(format!("multiple cells with value {value}")));
                    }
                    found = Some((r, c));
                }
            }
        }
        found.ok_or_else(|| Error::MalformedGrid(format!("no cell with value {value}")))
    }

    pub fn start(&self) -> Result<(usize, usize)> {
        self.find_unique(START)
    }

    pub fn end(&self) -> Result<(usize, usize)> {
        self.find_unique(END)
    }

    /// Breadth-first shortest path from start to end over 4-connected
    /// non-block cells, neighbours expanded up/right/down/left.
    pub fn shortest_path(&self) -> Result<Option<Vec<(usize, usize)>>> {
        let start = self.start()?;
        let end = self.end()?;
        let tree = bfs(self, start);
        Ok(tree.path_to(end))
    }
}

impl std::fmt::Display for MazeGrid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for row in &self.cells {
            let line: Vec<String> = row.iter().map(|v| format!("{v:>2}")).collect();
            writeln!(f, "[{}]", line.join(","))?;
        }
        Ok(())
    }
}

struct BfsTree {
    width: usize,
    parent: Vec<Option<usize>>,
    dist: Vec<Option<usize>>,
}

impl BfsTree {
    fn path_to(&self, cell: (usize, usize)) -> Option<Vec<(usize, usize)>> {
        let mut idx = cell.0 * self.width + cell.1;
        self.dist[idx]?;
        let mut path = vec![cell];
        while let Some(p) = self.parent[idx] {
            path.push((p / self.width, p % self.width));
            idx = p;
        }
        path.reverse();
        Some(path)
    }
}

fn bfs(grid: &MazeGrid, from: (usize, usize)) -> BfsTree {
    let (h, w) = (grid.height(), grid.width());
    let mut tree = BfsTree {
        width: w,
        parent: vec![None; h * w],
        dist: vec![None; h * w],
    };
    let mut queue = VecDeque::from([from]);
    tree.dist[from.0 * w + from.1] = Some(0);
    while let Some((r, c)) = queue.pop_front() {
        let d = tree.dist[r * w + c].unwrap();
        for (dr, dc) in MOVES {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            match grid.get(nr, nc) {
                Some(v) if v != BLOCK => {
                    let idx = nr as usize * w + nc as usize;
                    if tree.dist[idx].is_none() {
                        tree.dist[idx] = Some(d + 1);
                        tree.parent[idx] = Some(r * w + c);
                        queue.push_back((nr as usize, nc as usize));
                    }
                }
                _ => {}
            }
        }
    }
    tree
}

/// Number of direction changes along a cell path.
pub fn count_turns(path: &[(usize, usize)]) -> usize {
    let dirs: Vec<(isize, isize)> = path
        .windows(2)
        .map(|w| (w[1].0 as isize - w[0].0 as isize, w[1].1 as isize - w[0].1 as isize))
        .collect();
    dirs.windows(2).filter(|d| d[0] != d[1]).count()
}

/// True iff start and end are joined by 4-connected non-block cells.
pub fn maze_feasible(grid: &MazeGrid) -> Result<bool> {
    Ok(grid.shortest_path()?.is_some())
}

/// Shortest-path length and turn count, if the maze is feasible.
pub fn path_stats(grid: &MazeGrid) -> Result<Option<(usize, usize)>> {
    Ok(grid
        .shortest_path()?
        .map(|p| (p.len() - 1, count_turns(&p))))
}

/// Checks every difficulty bracket plus feasibility.
pub fn conforms(grid: &MazeGrid, params: &MazeParams) -> Result<bool> {
    let (lo, hi) = params.size.side_range();
    let side_ok = [grid.height(), grid.width()].iter().all(|s| (lo..=hi).contains(s));
    let Some((steps, turns)) = path_stats(grid)? else {
        return Ok(false);
    };
    let (slo, shi) = params.goal.steps_range();
    let (tlo, thi) = params.structure.turn_range();
    let start = grid.start()?;
    Ok(side_ok
        && (slo..=shi).contains(&steps)
        && (tlo..=thi).contains(&turns)
        && params.start.contains(grid.height(), grid.width(), start))
}

fn in_bounds(side: usize, r: isize, c: isize) -> bool {
    r >= 0 && c >= 0 && (r as usize) < side && (c as usize) < side
}

fn open_neighbours(cells: &[Vec<i8>], r: usize, c: usize) -> usize {
    let side = cells.len();
    MOVES
        .iter()
        .filter(|(dr, dc)| {
            let (nr, nc) = (r as isize + dr, c as isize + dc);
            in_bounds(side, nr, nc) && cells[nr as usize][nc as usize] != BLOCK
        })
        .count()
}

/// Randomised depth-first carving from every cell on `stack`. A cell is only
/// opened when it touches exactly one open cell, so open cells stay a tree
/// and every start-end path is unique.
fn carve_from(cells: &mut [Vec<i8>], mut stack: Vec<(usize, usize)>, rng: &mut Rng) {
    let side = cells.len();
    while let Some(&(r, c)) = stack.last() {
        let candidates: Vec<(usize, usize)> = MOVES
            .iter()
            .filter_map(|(dr, dc)| {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                in_bounds(side, nr, nc).then_some((nr as usize, nc as usize))
            })
            .filter(|&(nr, nc)| cells[nr][nc] == BLOCK && open_neighbours(cells, nr, nc) == 1)
            .collect();
        match candidates.choose(rng) {
            Some(&next) => {
                cells[next.0][next.1] = OPEN;
                stack.push(next);
            }
            None => {
                stack.pop();
            }
        }
    }
}

/// Draws a path whose length lies in `[min_steps, max_steps]` with exactly
/// `turns` direction changes, laid out as straight segments. Each new cell
/// may only touch its predecessor, so the path stays the unique route once
/// the rest of the maze is carved around it.
fn lay_path(
    side: usize,
    start: (usize, usize),
    (min_steps, max_steps): (usize, usize),
    turns: usize,
    rng: &mut Rng,
) -> Option<Vec<(usize, usize)>> {
    let mut cells = vec![vec![BLOCK; side]; side];
    cells[start.0][start.1] = OPEN;
    let mut path = vec![start];
    let mut prev_dir: Option<usize> = None;
    let room = |cells: &[Vec<i8>], from: (usize, usize), d: usize| {
        let mut n = 0;
        let (mut r, mut c) = (from.0 as isize, from.1 as isize);
        let mut probe = cells.to_vec();
        loop {
            let (nr, nc) = (r + MOVES[d].0, c + MOVES[d].1);
            if !in_bounds(side, nr, nc)
                || probe[nr as usize][nc as usize] != BLOCK
                || open_neighbours(&probe, nr as usize, nc as usize) != 1
            {
                return n;
            }
            probe[nr as usize][nc as usize] = OPEN;
            (r, c) = (nr, nc);
            n += 1;
        }
    };
    for seg in 0..=turns {
        let last = seg == turns;
        let done = path.len() - 1;
        // every later segment needs at least one move
        let reserve = turns - seg;
        let head = *path.last().unwrap();
        let options: Vec<(usize, usize, usize)> = (0..4)
            .filter(|&d| prev_dir.is_none_or(|p| d != p && d != (p + 2) % 4))
            .filter_map(|d| {
                let space = room(&cells, head, d);
                let lo = if last { min_steps.saturating_sub(done).max(1) } else { 1 };
                let hi = space.min(max_steps.saturating_sub(done + reserve));
                (lo <= hi).then_some((d, lo, hi))
            })
            .collect();
        let &(d, lo, hi) = options.choose(rng)?;
        let len = if !last && rng.random_bool(0.5) { hi } else { rng.random_range(lo..=hi) };
        for _ in 0..len {
            let (r, c) = *path.last().unwrap();
            let next = ((r as isize + MOVES[d].0) as usize, (c as isize + MOVES[d].1) as usize);
            cells[next.0][next.1] = OPEN;
            path.push(next);
        }
        prev_dir = Some(d);
    }
    let steps = path.len() - 1;
    (min_steps..=max_steps).contains(&steps).then_some(path)
}

fn sample_in(lo: usize, hi: usize, cap: usize, rng: &mut Rng) -> usize {
    rng.random_range(lo..=hi.min(cap).max(lo))
}

/// Generates a grid meeting all four difficulty brackets. Attempts alternate
/// between laying a bracketed path first and carving first then choosing
/// an end; up to `MAX_RETRIES` attempts are made.
pub fn generate_maze(params: &MazeParams, rng: &mut Rng) -> Result<MazeGrid> {
    if !params.brackets_compatible() {
        return Err(Error::InfeasibleSpec {
            retries: 0,
            reason: format!(
                "{:?} structure needs more turns than a {:?} goal path can hold",
                params.structure, params.goal
            ),
        });
    }
    let (side_lo, side_hi) = params.size.side_range();
    let (slo, shi) = params.goal.steps_range();
    let (tlo, thi) = params.structure.turn_range();
    for attempt in 0..MAX_RETRIES {
        let side = if attempt % 4 == 0 {
            side_hi
        } else {
            rng.random_range(side_lo..=side_hi)
        };
        let zone: Vec<(usize, usize)> = (0..side)
            .flat_map(|r| (0..side).map(move |c| (r, c)))
            .filter(|&cell| params.start.contains(side, side, cell))
            .collect();
        let start = *zone.choose(rng).expect("start zone is never empty");
        let mut cells = vec![vec![BLOCK; side]; side];
        let end = if attempt % 2 == 0 {
            let turns = sample_in(tlo, thi, tlo + 4, rng);
            let Some(path) = lay_path(side, start, (slo, shi.min(side * side)), turns, rng) else {
                continue;
            };
            for &(r, c) in &path {
                cells[r][c] = OPEN;
            }
            let mut seeds = path.clone();
            seeds.shuffle(rng);
            carve_from(&mut cells, seeds, rng);
            *path.last().unwrap()
        } else {
            cells[start.0][start.1] = OPEN;
            carve_from(&mut cells, vec![start], rng);
            let grid = MazeGrid { cells: cells.clone() };
            let tree = bfs(&grid, start);
            let ends: Vec<(usize, usize)> = (0..side)
                .flat_map(|r| (0..side).map(move |c| (r, c)))
                .filter(|&cell| {
                    tree.path_to(cell).is_some_and(|p| {
                        let steps = p.len() - 1;
                        let turns = count_turns(&p);
                        (slo..=shi).contains(&steps) && (tlo..=thi).contains(&turns)
                    })
                })
                .collect();
            match ends.choose(rng) {
                Some(&end) => end,
                None => continue,
            }
        };
        cells[start.0][start.1] = START;
        cells[end.0][end.1] = END;
        let grid = MazeGrid { cells };
        if conforms(&grid, params)? {
            return Ok(grid);
        }
    }
    Err(Error::InfeasibleSpec {
        retries: MAX_RETRIES,
        reason: format!("no layout satisfied {params:?}"),
    })
}

/// Grid navigation with a 3x3 egocentric window plus normalised coordinates.
#[derive(Debug, Clone)]
pub struct MazeEnv {
    grid: MazeGrid,
    start: (usize, usize),
    pos: (usize, usize),
    steps: usize,
    horizon: usize,
    done: bool,
}

impl MazeEnv {
    pub fn from_grid(grid: MazeGrid) -> Result<Self> {
        let start = grid.start()?;
        grid.end()?;
        let horizon = 4 * (grid.width() + grid.height());
        Ok(Self {
            grid,
            start,
            pos: start,
            steps: 0,
            horizon,
            done: false,
        })
    }

    /// The layout is drawn from `seed`. Combinations whose turn and length
    /// brackets cannot hold together are relaxed to the nearest structure
    /// level that can.
    pub fn from_params(params: MazeParams, seed: u64) -> Result<Self> {
        let mut params = params;
        if !params.brackets_compatible() {
            params.structure = Level::Medium;
        }
        let grid = match generate_maze(&params, &mut seeded(seed)) {
            Err(Error::InfeasibleSpec { .. }) if params.structure != Level::Medium => {
                params.structure = Level::Medium;
                generate_maze(&params, &mut seeded(seed))?
            }
            other => other?,
        };
        Self::from_grid(grid)
    }

    pub fn grid(&self) -> &MazeGrid {
        &self.grid
    }

    pub fn position(&self) -> (usize, usize) {
        self.pos
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Start is fixed by the layout; `seed` has no effect.
    pub fn reset(&mut self, _seed: u64) -> Vec<f64> {
        self.pos = self.start;
        self.steps = 0;
        self.done = false;
        self.observation()
    }

    pub fn observation(&self) -> Vec<f64> {
        let mut obs = Vec::with_capacity(OBS_DIM);
        let (r, c) = (self.pos.0 as isize, self.pos.1 as isize);
        for dr in -1..=1 {
            for dc in -1..=1 {
                obs.push(match self.grid.get(r + dr, c + dc) {
                    None | Some(BLOCK) => -1.0,
                    Some(END) => 1.0,
                    Some(_) => 0.0,
                });
            }
        }
        let norm = |v: usize, n: usize| if n > 1 { v as f64 / (n - 1) as f64 } else { 0.0 };
        obs.push(norm(self.pos.0, self.grid.height()));
        obs.push(norm(self.pos.1, self.grid.width()));
        obs
    }

    pub fn step(&mut self, action: &Action) -> Result<StepResult> {
        if self.done {
            return Err(Error::IllegalTransition(
                "step on a finished maze episode; reset first".into(),
            ));
        }
        let dir = match action {
            Action::Discrete(a) if *a < 4 => MOVES[*a],
            other => return Err(Error::InvalidAction(format!("maze expects a move in 0..4, got {other:?}"))),
        };
        let (nr, nc) = (self.pos.0 as isize + dir.0, self.pos.1 as isize + dir.1);
        if matches!(self.grid.get(nr, nc), Some(v) if v != BLOCK) {
            self.pos = (nr as usize, nc as usize);
        }
        self.steps += 1;
        let terminal = self.grid.cells[self.pos.0][self.pos.1] == END;
        let truncated = !terminal && self.steps >= self.horizon;
        self.done = terminal || truncated;
        Ok(StepResult {
            observation: self.observation(),
            reward: if terminal { GOAL_REWARD } else { STEP_COST },
            terminal,
            truncated,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_env, sample_params, EnvInstance, Family};

    fn grid(rows: &[&[i8]]) -> MazeGrid {
        MazeGrid::new(rows.iter().map(|r| r.to_vec()).collect()).unwrap()
    }

    #[test]
    fn document_examples_classify() {
        let feasible = grid(&[&[0, -1, -1, 2], &[1, -1, 0, 0], &[0, -1, 0, -1], &[0, 0, 0, -1]]);
        let blocked = grid(&[&[0, -1, -1, 2], &[1, -1, 0, 0], &[0, -1, -1, 0], &[0, 0, 0, -1]]);
        let diagonal = grid(&[&[1, -1], &[-1, 2]]);
        assert!(maze_feasible(&feasible).unwrap());
        assert!(!maze_feasible(&blocked).unwrap());
        assert!(!maze_feasible(&diagonal).unwrap());
        assert_eq!(path_stats(&feasible).unwrap(), Some((8, 4)));
    }

    #[test]
    fn malformed_grids_error() {
        let none = grid(&[&[0, 0], &[0, 2]]);
        assert!(matches!(maze_feasible(&none), Err(Error::MalformedGrid(_))));
        let two = grid(&[&[1, 1], &[0, 2]]);
        assert!(matches!(maze_feasible(&two), Err(Error::MalformedGrid(_))));
        assert!(MazeGrid::new(vec![vec![0, 1], vec![2]]).is_err());
        assert!(MazeGrid::new(vec![vec![0, 7]]).is_err());
    }

    #[test]
    fn easy_maze_is_small_short_and_top_left() {
        let params = MazeParams::new(Level::Easy, Level::Easy, Level::Easy, StartZone::TopLeft);
        let g = generate_maze(&params, &mut seeded(7)).unwrap();
        assert!(g.height() <= 7 && g.width() <= 7);
        let (steps, turns) = path_stats(&g).unwrap().unwrap();
        assert!(steps < 5 && turns < 2);
        let (r, c) = g.start().unwrap();
        assert!(r <= 2 && c <= 2);
    }

    #[test]
    fn hard_size_bracket() {
        let mut rng = seeded(1);
        for _ in 0..20 {
            let mut p = MazeParams::from_vector(&sample_params(&param_space(), &mut rng)).unwrap();
            p.size = Level::Hard;
            if let Ok(g) = generate_maze(&p, &mut rng) {
                assert!(g.height() > 10 && g.height() < 15);
            }
        }
    }

    #[test]
    fn long_path_in_small_grid_is_found() {
        // a serpentine witness exists in 7x7, so the generator must succeed
        let serpentine = grid(&[
            &[1, 0, 0, 0, 0, 0, 0],
            &[-1, -1, -1, -1, -1, -1, 0],
            &[0, 0, 0, 0, 0, 0, 0],
            &[0, -1, -1, -1, -1, -1, -1],
            &[0, 0, 0, 0, 0, 0, 2],
            &[-1, -1, -1, -1, -1, -1, -1],
            &[-1, -1, -1, -1, -1, -1, -1],
        ]);
        assert_eq!(path_stats(&serpentine).unwrap(), Some((22, 4)));
        let p = MazeParams::new(Level::Easy, Level::Hard, Level::Hard, StartZone::TopLeft);
        let g = generate_maze(&p, &mut seeded(5)).unwrap();
        assert!(conforms(&g, &p).unwrap());
    }

    #[test]
    fn incompatible_brackets_raise_infeasible() {
        let p = MazeParams::new(Level::Medium, Level::Hard, Level::Easy, StartZone::Center);
        assert!(matches!(
            generate_maze(&p, &mut seeded(0)),
            Err(Error::InfeasibleSpec { .. })
        ));
        // the environment constructor relaxes the structure level instead
        assert!(MazeEnv::from_params(p, 0).is_ok());
    }

    #[test]
    fn walls_block_and_goal_terminates() {
        let g = grid(&[&[1, 2], &[-1, -1]]);
        let mut env = MazeEnv::from_grid(g).unwrap();
        let r = env.step(&Action::Discrete(2)).unwrap();
        assert_eq!(env.position(), (0, 0));
        assert_eq!(r.reward, STEP_COST);
        assert!(!r.terminal);
        let r = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(r.reward, GOAL_REWARD);
        assert!(r.terminal && !r.truncated);
        assert!(matches!(env.step(&Action::Discrete(1)), Err(Error::IllegalTransition(_))));
        env.reset(0);
        assert!(!env.is_done());
        assert_eq!(env.steps(), 0);
    }

    #[test]
    fn observation_window() {
        let g = grid(&[&[1, 2], &[0, -1]]);
        let env = MazeEnv::from_grid(g).unwrap();
        let obs = env.observation();
        assert_eq!(obs.len(), OBS_DIM);
        assert_eq!(&obs[..9], &[-1.0, -1.0, -1.0, -1.0, 0.0, 1.0, -1.0, 0.0, -1.0]);
        assert_eq!(&obs[9..], &[0.0, 0.0]);
    }

    #[test]
    fn same_seed_same_layout() {
        let p = ParamVector::new(vec![1.0, 1.0, 1.0, 3.0]);
        let a = make_env(Family::Maze, &p, 7).unwrap();
        let b = make_env(Family::Maze, &p, 7).unwrap();
        match (a, b) {
            (EnvInstance::Maze(a), EnvInstance::Maze(b)) => assert_eq!(a.grid(), b.grid()),
            _ => unreachable!(),
        }
    }

    #[test]
    fn grid_serializes_as_integer_matrix() {
        let g = grid(&[&[1, -1], &[0, 2]]);
        let s = serde_json::to_string(&g).unwrap();
        assert_eq!(s, "[[1,-1],[0,2]]");
        let back: MazeGrid = serde_json::from_str(&s).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<MazeGrid>("[[1,-1],[0]]").is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(200))]
        #[test]
        fn generated_mazes_conform(seed in 0u64..u64::MAX) {
            let mut rng = seeded(seed);
            let p = MazeParams::from_vector(&sample_params(&param_space(), &mut rng)).unwrap();
            match generate_maze(&p, &mut rng) {
                Ok(g) => {
                    proptest::prop_assert!(maze_feasible(&g).unwrap());
                    proptest::prop_assert!(conforms(&g, &p).unwrap());
                }
                Err(Error::InfeasibleSpec { .. }) => proptest::prop_assert!(!p.brackets_compatible()),
                Err(e) => proptest::prop_assert!(false, "{e}"),
            }
        }
    }
}
