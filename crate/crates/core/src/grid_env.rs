//! Multi-agent grid-world coverage environment.
//!
//! Agents move one cell per step on a 4-connected grid, may share cells, and
//! see a `(2r+1)²` egocentric window with three channels plus their
//! normalized Hilbert index. Every occupied cell gains one visit per
//! occupant per step (spawn cells included).

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::{Action, Cell};
use crate::error::{domain, Error, Result};
use crate::hilbert::HilbertMap;
use crate::shaping::{shaped_reward, ShapingConfig};

pub const DEFAULT_OBS_RADIUS: usize = 2;
pub const CHANNELS: usize = 3;

/// Flattened observation length for a window radius, including the index scalar.
pub const fn obs_len(radius: usize) -> usize {
    let side = 2 * radius + 1;
    side * side * CHANNELS + 1
}

/// Length of the default 5×5×3 + 1 observation.
pub const OBS_LEN: usize = obs_len(DEFAULT_OBS_RADIUS);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub width: usize,
    pub height: usize,
    pub obstacles: BTreeSet<Cell>,
    /// Fixed target cells. When empty, `n_targets` are drawn at every reset.
    pub targets: BTreeSet<Cell>,
    pub n_targets: usize,
    pub n_agents: usize,
    /// Steps per episode; `None` means `4·A/N`.
    pub horizon: Option<usize>,
    pub obs_radius: usize,
    pub seed: u64,
    pub cell_size_m: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            obstacles: BTreeSet::new(),
            targets: BTreeSet::new(),
            n_targets: 8,
            n_agents: 4,
            horizon: None,
            obs_radius: DEFAULT_OBS_RADIUS,
            seed: 0,
            cell_size_m: 2.0,
        }
    }
}

impl EnvConfig {
    pub fn open(width: usize, height: usize, n_agents: usize) -> Self {
        Self {
            width,
            height,
            n_agents,
            ..Self::default()
        }
    }

    /// Reads a map from text: one row per line, `.` free, `#` obstacle,
    /// `T` target. The first line is the northernmost row.
    pub fn apply_map(&mut self, text: &str) -> Result<()> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::Config("map file is empty".into()));
        }
        let width = rows[0].chars().count();
        let height = rows.len();
        let mut obstacles = BTreeSet::new();
        let mut targets = BTreeSet::new();
        for (row, line) in rows.iter().enumerate() {
            if line.chars().count() != width {
                return Err(Error::Config(format!(
                    "map row {row} has {} columns, expected {width}",
                    line.chars().count()
                )));
            }
            let y = (height - 1 - row) as i32;
            for (x, ch) in line.chars().enumerate() {
                let cell = Cell::new(x as i32, y);
                match ch {
                    '.' => {}
                    '#' => {
                        obstacles.insert(cell);
                    }
                    'T' => {
                        targets.insert(cell);
                    }
                    other => {
                        return Err(Error::Config(format!(
                            "unexpected map character `{other}` at row {row}, column {x}"
                        )))
                    }
                }
            }
        }
        self.width = width;
        self.height = height;
        self.obstacles = obstacles;
        self.targets = targets;
        Ok(())
    }

    pub fn load_map(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read map {}: {e}", path.display())))?;
        self.apply_map(&text)
    }

    pub fn in_bounds(&self, c: Cell) -> bool {
        c.x >= 0 && c.y >= 0 && (c.x as usize) < self.width && (c.y as usize) < self.height
    }

    pub fn hilbert_map(&self) -> Result<HilbertMap> {
        HilbertMap::for_workspace(self.width, self.height, |c| !self.obstacles.contains(&c))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.width < 5 || self.height < 5 {
            return bad(format!(
                "grid must be at least 5x5, got {}x{}",
                self.width, self.height
            ));
        }
        if self.n_agents == 0 {
            return bad("n_agents must be positive".into());
        }
        if self.cell_size_m.is_nan() || self.cell_size_m <= 0.0 {
            return bad(format!(
                "cell_size_m must be positive, got {}",
                self.cell_size_m
            ));
        }
        if self.horizon == Some(0) {
            return bad("horizon must be positive".into());
        }
        if let Some(c) = self.obstacles.iter().find(|c| !self.in_bounds(**c)) {
            return bad(format!("obstacle {c} out of bounds"));
        }
        if let Some(c) = self.targets.iter().find(|c| !self.in_bounds(**c)) {
            return bad(format!("target {c} out of bounds"));
        }
        if let Some(c) = self.targets.intersection(&self.obstacles).next() {
            return bad(format!("cell {c} is both a target and an obstacle"));
        }
        let active = self.width * self.height - self.obstacles.len();
        if active < 2 || self.n_agents > active {
            return bad(format!(
                "{} agents do not fit in {active} free cells",
                self.n_agents
            ));
        }
        if self.targets.is_empty() && self.n_targets > active - self.n_agents {
            return bad(format!("{} random targets do not fit", self.n_targets));
        }
        Ok(())
    }
}

/// Egocentric observation of one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Channel-major window: obstacle/out-of-bounds, visited, other agents.
    pub patch: Vec<f64>,
    /// Normalized Hilbert index of the agent's cell.
    pub h: f64,
    pub cell: Cell,
    pub rank: usize,
}

impl Observation {
    /// Network input; the index slot is zeroed when augmentation is off.
    pub fn to_input(&self, augment: bool) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.patch.len() + 1);
        self.write_input(augment, &mut v);
        v
    }

    pub fn write_input(&self, augment: bool, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.patch);
        out.push(if augment { self.h } else { 0.0 });
    }
}

#[derive(Debug, Clone)]
pub struct StepResult {
    /// Task reward plus shaping.
    pub rewards: Vec<f64>,
    /// Task reward alone.
    pub task_rewards: Vec<f64>,
    pub observations: Vec<Observation>,
    pub done: bool,
    /// Every active cell has been visited.
    pub terminated: bool,
    /// Cells visited for the first time during this step.
    pub newly_covered: usize,
}

#[derive(Debug, Clone)]
pub struct GridWorld {
    cfg: EnvConfig,
    shaping: ShapingConfig,
    map: HilbertMap,
    horizon: usize,
    visits: Vec<u32>,
    agents: Vec<Cell>,
    targets: BTreeSet<Cell>,
    covered: usize,
    total_visits: u64,
    steps: usize,
    done: bool,
    rng: ChaCha8Rng,
}

impl GridWorld {
    pub fn new(cfg: EnvConfig, shaping: ShapingConfig) -> Result<Self> {
        cfg.validate()?;
        shaping.validate()?;
        let map = cfg.hilbert_map()?;
        let horizon = cfg
            .horizon
            .unwrap_or_else(|| (4 * map.active_count() / cfg.n_agents).max(1));
        let seed = cfg.seed;
        let mut env = Self {
            visits: vec![0; cfg.width * cfg.height],
            cfg,
            shaping,
            map,
            horizon,
            agents: Vec::new(),
            targets: BTreeSet::new(),
            covered: 0,
            total_visits: 0,
            steps: 0,
            done: false,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        env.reset(seed);
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn map(&self) -> &HilbertMap {
        &self.map
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn n_agents(&self) -> usize {
        self.cfg.n_agents
    }

    pub fn agents(&self) -> &[Cell] {
        &self.agents
    }

    pub fn targets(&self) -> &BTreeSet<Cell> {
        &self.targets
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn obs_len(&self) -> usize {
        obs_len(self.cfg.obs_radius)
    }

    fn slot(&self, c: Cell) -> usize {
        c.y as usize * self.cfg.width + c.x as usize
    }

    pub fn visits(&self, c: Cell) -> u32 {
        if self.cfg.in_bounds(c) {
            self.visits[self.slot(c)]
        } else {
            0
        }
    }

    /// Rank offsets `⌊i·A/N⌋` along the curve.
    pub fn spawn_cells(&self) -> Vec<Cell> {
        let a = self.map.active_count();
        let n = self.cfg.n_agents;
        (0..n)
            .map(|i| self.map.cell(i * a / n).expect("rank within active range"))
            .collect()
    }

    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.visits.iter_mut().for_each(|v| *v = 0);
        self.covered = 0;
        self.total_visits = 0;
        self.steps = 0;
        self.agents = self.spawn_cells();
        for i in 0..self.agents.len() {
            self.visit(self.agents[i]);
        }
        self.targets = if self.cfg.targets.is_empty() {
            let candidates: Vec<Cell> = self
                .map
                .cells()
                .iter()
                .copied()
                .filter(|c| !self.agents.contains(c))
                .collect();
            sample(&mut self.rng, candidates.len(), self.cfg.n_targets)
                .into_iter()
                .map(|i| candidates[i])
                .collect()
        } else {
            self.cfg.targets.clone()
        };
        self.done = self.covered == self.map.active_count();
        self.observations()
    }

    fn visit(&mut self, c: Cell) -> bool {
        let slot = self.slot(c);
        self.visits[slot] += 1;
        self.total_visits += 1;
        if self.visits[slot] == 1 {
            self.covered += 1;
            true
        } else {
            false
        }
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        if actions.len() != self.cfg.n_agents {
            return domain(format!(
                "expected {} actions, got {}",
                self.cfg.n_agents,
                actions.len()
            ));
        }
        if self.done {
            return domain("step called on a finished episode");
        }
        let before: Vec<Cell> = self.agents.clone();
        for (agent, &action) in self.agents.iter_mut().zip(actions) {
            let next = agent.step(action);
            if self.map.is_active(next) {
                *agent = next;
            }
        }
        let mut newly_covered = 0;
        let mut rewards = Vec::with_capacity(actions.len());
        let mut task_rewards = Vec::with_capacity(actions.len());
        for i in 0..self.agents.len() {
            let cell = self.agents[i];
            if self.visit(cell) {
                newly_covered += 1;
            }
            let task = if self.targets.remove(&cell) { 1.0 } else { 0.0 };
            let rank_before = self
                .map
                .rank(before[i])
                .expect("agents stay on active cells");
            let rank_after = self.map.rank(cell).expect("agents stay on active cells");
            task_rewards.push(task);
            rewards.push(shaped_reward(task, rank_before, rank_after, &self.shaping));
        }
        self.steps += 1;
        let terminated = self.covered == self.map.active_count();
        self.done = terminated || self.steps >= self.horizon;
        Ok(StepResult {
            rewards,
            task_rewards,
            observations: self.observations(),
            done: self.done,
            terminated,
            newly_covered,
        })
    }

    pub fn observations(&self) -> Vec<Observation> {
        (0..self.agents.len()).map(|i| self.observe(i)).collect()
    }

    pub fn observe(&self, agent: usize) -> Observation {
        let me = self.agents[agent];
        let r = self.cfg.obs_radius as i32;
        let side = (2 * r + 1) as usize;
        let plane = side * side;
        let mut patch = vec![0.0; plane * CHANNELS];
        for (row, dy) in (-r..=r).enumerate() {
            for (col, dx) in (-r..=r).enumerate() {
                let c = Cell::new(me.x + dx, me.y + dy);
                let k = row * side + col;
                if !self.map.is_active(c) {
                    patch[k] = 1.0;
                    continue;
                }
                if self.visits[self.slot(c)] > 0 {
                    patch[plane + k] = 1.0;
                }
                let others = self
                    .agents
                    .iter()
                    .enumerate()
                    .any(|(j, &a)| j != agent && a == c);
                if others {
                    patch[2 * plane + k] = 1.0;
                }
            }
        }
        let rank = self.map.rank(me).expect("agents stay on active cells");
        let h = self.map.normalized_index(me).unwrap_or(0.0);
        Observation {
            patch,
            h,
            cell: me,
            rank,
        }
    }

    /// Moves that keep `agent` on an active cell (excluding `Stay`).
    pub fn valid_moves(&self, agent: usize) -> Vec<Action> {
        let me = self.agents[agent];
        Action::MOVES_BY_PRIORITY
            .into_iter()
            .filter(|&a| self.map.is_active(me.step(a)))
            .collect()
    }

    /// Distribution of the curve-guided exploration action for `agent`.
    ///
    /// A point mass on the curve action, unless that move is blocked, in which
    /// case it is uniform over the valid moves (or `Stay` if boxed in).
    pub fn guided_distribution(&self, agent: usize) -> [f64; Action::COUNT] {
        let me = self.agents[agent];
        let action = self
            .map
            .curve_action(me)
            .expect("agents stay on active cells");
        let mut dist = [0.0; Action::COUNT];
        if action == Action::Stay || self.map.is_active(me.step(action)) {
            dist[action.index()] = 1.0;
            return dist;
        }
        let valid = self.valid_moves(agent);
        if valid.is_empty() {
            dist[Action::Stay.index()] = 1.0;
        } else {
            let p = 1.0 / valid.len() as f64;
            for a in valid {
                dist[a.index()] = p;
            }
        }
        dist
    }

    /// Samples the curve-guided exploration action.
    pub fn guided_action<R: Rng + ?Sized>(&self, agent: usize, rng: &mut R) -> Action {
        let dist = self.guided_distribution(agent);
        sample_categorical(&dist, rng)
    }

    pub fn active_count(&self) -> usize {
        self.map.active_count()
    }

    pub fn covered_cells(&self) -> usize {
        self.covered
    }

    pub fn total_visits(&self) -> u64 {
        self.total_visits
    }

    /// Fraction of active cells visited at least once.
    pub fn coverage_ratio(&self) -> f64 {
        self.covered as f64 / self.map.active_count() as f64
    }

    /// Total visits divided by the number of distinct visited cells.
    pub fn redundancy(&self) -> Result<f64> {
        if self.covered == 0 {
            return domain("redundancy is undefined before any visit");
        }
        Ok(self.total_visits as f64 / self.covered as f64)
    }
}

/// Draws an index from a probability vector. Point masses consume no randomness.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64; Action::COUNT], rng: &mut R) -> Action {
    if let Some(i) = probs.iter().position(|&p| p == 1.0) {
        return Action::ALL[i];
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::ALL[i];
        }
    }
    // Rounding left `acc` slightly below 1: return the last action with mass.
    let last = probs
        .iter()
        .rposition(|&p| p > 0.0)
        .unwrap_or(Action::Stay.index());
    Action::ALL[last]
}
