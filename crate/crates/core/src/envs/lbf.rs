//! Level-based foraging on a rectangular grid.
//!
//! Actions: 0 none, 1 north, 2 south, 3 west, 4 east, 5 load. Moves are
//! proposed simultaneously and canceled to a fixed point: a move is canceled
//! when it leaves the grid, enters food, shares its target with another
//! move, or targets the cell of an agent that ends up staying.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::check_actions;
use super::{Env, EnvError, Observation, StepResult};

pub const NONE: usize = 0;
pub const LOAD: usize = 5;
const N_ACTIONS: usize = 6;
const CELL_FEATURES: usize = 5;

/// `(row, col)`, row 0 at the north edge.
pub type Pos = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfConfig {
    pub width: usize,
    pub height: usize,
    pub agent_levels: Vec<u32>,
    pub food_levels: Vec<u32>,
    pub sight: usize,
    pub max_steps: usize,
    pub move_penalty: f64,
}

impl Default for LbfConfig {
    fn default() -> Self {
        LbfConfig {
            width: 10,
            height: 10,
            agent_levels: vec![1, 1, 2],
            food_levels: vec![1, 2, 3],
            sight: 2,
            max_steps: 50,
            move_penalty: -0.002,
        }
    }
}

impl LbfConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::Config(m));
        if self.width == 0 || self.height == 0 {
            return bad("env.width and env.height must be positive".into());
        }
        if self.agent_levels.is_empty() {
            return bad("env.agent_levels must list at least one agent".into());
        }
        if self.food_levels.is_empty() {
            return bad("env.food_levels must list at least one food item".into());
        }
        if self.agent_levels.iter().chain(&self.food_levels).any(|&l| l == 0) {
            return bad("levels must be integers >= 1".into());
        }
        if self.max_steps == 0 {
            return bad("env.max_steps must be positive".into());
        }
        if !self.move_penalty.is_finite() {
            return bad("env.move_penalty must be finite".into());
        }
        let cells = self.width * self.height;
        let needed = self.agent_levels.len() + self.food_levels.len();
        if needed > cells {
            return Err(EnvError::GridTooSmall { cells, needed });
        }
        Ok(())
    }

    fn max_level(&self) -> f64 {
        self.agent_levels
            .iter()
            .chain(&self.food_levels)
            .copied()
            .max()
            .unwrap_or(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Agent {
    pub pos: Pos,
    pub level: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Food {
    pub pos: Pos,
    pub level: u32,
    pub collected: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LbfState {
    pub agents: Vec<Agent>,
    pub foods: Vec<Food>,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct LbfEnv {
    cfg: LbfConfig,
    state: LbfState,
    running: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Cell {
    Empty,
    Agent(u32),
    Food(u32),
    Wall,
}

impl LbfEnv {
    pub fn new(cfg: LbfConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        Ok(LbfEnv {
            cfg,
            state: LbfState {
                agents: Vec::new(),
                foods: Vec::new(),
                t: 0,
            },
            running: false,
        })
    }

    pub fn config(&self) -> &LbfConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LbfState {
        &self.state
    }

    /// Installs a hand-constructed board. Levels come from the state.
    pub fn set_state(&mut self, state: LbfState) -> Result<Observation, EnvError> {
        let mut seen = std::collections::HashSet::new();
        let live = state
            .agents
            .iter()
            .map(|a| a.pos)
            .chain(state.foods.iter().filter(|f| !f.collected).map(|f| f.pos));
        for p in live {
            if p.0 >= self.cfg.height || p.1 >= self.cfg.width {
                return Err(EnvError::Config(format!("position {p:?} outside the grid")));
            }
            if !seen.insert(p) {
                return Err(EnvError::Config(format!("two entities share cell {p:?}")));
            }
        }
        self.cfg.agent_levels = state.agents.iter().map(|a| a.level).collect();
        self.cfg.food_levels = state.foods.iter().map(|f| f.level).collect();
        self.running = state.foods.iter().any(|f| !f.collected) && state.t < self.cfg.max_steps;
        self.state = state;
        Ok(self.observation())
    }

    fn cell(&self, r: isize, c: isize) -> Cell {
        if r < 0 || c < 0 || r as usize >= self.cfg.height || c as usize >= self.cfg.width {
            return Cell::Wall;
        }
        let p = (r as usize, c as usize);
        if let Some(a) = self.state.agents.iter().find(|a| a.pos == p) {
            return Cell::Agent(a.level);
        }
        if let Some(f) = self.state.foods.iter().find(|f| !f.collected && f.pos == p) {
            return Cell::Food(f.level);
        }
        Cell::Empty
    }

    /// Local view of one agent: the window cells in row-major order, each as
    /// `[empty, agent, food, wall, level / max_level]`, then the agent's own
    /// normalized row, column and level.
    pub fn observe(&self, agent: usize) -> Vec<f64> {
        let s = self.cfg.sight as isize;
        let max_level = self.cfg.max_level();
        let me = &self.state.agents[agent];
        let mut out = Vec::with_capacity(self.obs_dim());
        for dr in -s..=s {
            for dc in -s..=s {
                let cell = self.cell(me.pos.0 as isize + dr, me.pos.1 as isize + dc);
                let (class, level) = match cell {
                    Cell::Empty => (0, 0),
                    Cell::Agent(l) => (1, l),
                    Cell::Food(l) => (2, l),
                    Cell::Wall => (3, 0),
                };
                let mut feat = [0.0; CELL_FEATURES];
                feat[class] = 1.0;
                feat[4] = level as f64 / max_level;
                out.extend_from_slice(&feat);
            }
        }
        out.push(norm(me.pos.0, self.cfg.height));
        out.push(norm(me.pos.1, self.cfg.width));
        out.push(me.level as f64 / max_level);
        out
    }

    /// Agent rows/cols/levels, then food rows/cols/levels/presence flags.
    pub fn global_state(&self) -> Vec<f64> {
        let max_level = self.cfg.max_level();
        let mut s = Vec::with_capacity(self.state_dim());
        for a in &self.state.agents {
            s.push(norm(a.pos.0, self.cfg.height));
            s.push(norm(a.pos.1, self.cfg.width));
            s.push(a.level as f64 / max_level);
        }
        for f in &self.state.foods {
            s.push(norm(f.pos.0, self.cfg.height));
            s.push(norm(f.pos.1, self.cfg.width));
            s.push(f.level as f64 / max_level);
            s.push(if f.collected { 0.0 } else { 1.0 });
        }
        s
    }

    fn observation(&self) -> Observation {
        Observation {
            obs: (0..self.state.agents.len()).map(|i| self.observe(i)).collect(),
            state: self.global_state(),
        }
    }

    fn target(&self, pos: Pos, action: usize) -> Option<Pos> {
        let (r, c) = (pos.0 as isize, pos.1 as isize);
        let (r, c) = match action {
            1 => (r - 1, c),
            2 => (r + 1, c),
            3 => (r, c - 1),
            4 => (r, c + 1),
            _ => return None,
        };
        match self.cell(r, c) {
            Cell::Wall | Cell::Food(_) => None,
            _ => Some((r as usize, c as usize)),
        }
    }

    /// Resolves simultaneous moves; returns the new positions.
    fn resolve_moves(&self, actions: &[usize]) -> Vec<Pos> {
        let agents = &self.state.agents;
        let mut target: Vec<Option<Pos>> = agents
            .iter()
            .zip(actions)
            .map(|(a, &u)| self.target(a.pos, u))
            .collect();
        loop {
            let cancel: Vec<usize> = (0..agents.len())
                .filter(|&i| {
                    let Some(t) = target[i] else { return false };
                    let contested = target
                        .iter()
                        .enumerate()
                        .any(|(j, &o)| j != i && o == Some(t));
                    let blocked = agents
                        .iter()
                        .enumerate()
                        .any(|(j, a)| j != i && target[j].is_none() && a.pos == t);
                    contested || blocked
                })
                .collect();
            if cancel.is_empty() {
                break;
            }
            for i in cancel {
                target[i] = None;
            }
        }
        agents
            .iter()
            .zip(target)
            .map(|(a, t)| t.unwrap_or(a.pos))
            .collect()
    }
}

fn norm(v: usize, size: usize) -> f64 {
    if size <= 1 {
        0.0
    } else {
        v as f64 / (size - 1) as f64
    }
}

fn adjacent(a: Pos, b: Pos) -> bool {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
}

impl Env for LbfEnv {
    fn n_agents(&self) -> usize {
        self.cfg.agent_levels.len()
    }

    fn n_actions(&self) -> usize {
        N_ACTIONS
    }

    fn obs_dim(&self) -> usize {
        let w = 2 * self.cfg.sight + 1;
        w * w * CELL_FEATURES + 3
    }

    fn state_dim(&self) -> usize {
        3 * self.cfg.agent_levels.len() + 4 * self.cfg.food_levels.len()
    }

    fn max_steps(&self) -> usize {
        self.cfg.max_steps
    }

    fn reset(&mut self, seed: u64) -> Result<Observation, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cells = self.cfg.width * self.cfg.height;
        let n_agents = self.cfg.agent_levels.len();
        let needed = n_agents + self.cfg.food_levels.len();
        if needed > cells {
            return Err(EnvError::GridTooSmall { cells, needed });
        }
        let picks = sample(&mut rng, cells, needed).into_vec();
        let at = |k: usize| (picks[k] / self.cfg.width, picks[k] % self.cfg.width);
        self.state = LbfState {
            agents: self
                .cfg
                .agent_levels
                .iter()
                .enumerate()
                .map(|(i, &level)| Agent { pos: at(i), level })
                .collect(),
            foods: self
                .cfg
                .food_levels
                .iter()
                .enumerate()
                .map(|(i, &level)| Food {
                    pos: at(n_agents + i),
                    level,
                    collected: false,
                })
                .collect(),
            t: 0,
        };
        self.running = true;
        Ok(self.observation())
    }

    fn step(&mut self, actions: &[usize]) -> Result<StepResult, EnvError> {
        if !self.running {
            return Err(EnvError::NotRunning);
        }
        check_actions(actions, self.n_agents(), N_ACTIONS)?;
        let mut reward = 0.0;
        for &u in actions {
            if u != NONE && u != LOAD {
                reward += self.cfg.move_penalty;
            }
        }
        let moved = self.resolve_moves(actions);
        for (a, p) in self.state.agents.iter_mut().zip(moved) {
            a.pos = p;
        }
        let total_food: u32 = self.state.foods.iter().map(|f| f.level).sum();
        let agents = &self.state.agents;
        for food in self.state.foods.iter_mut().filter(|f| !f.collected) {
            let power: u32 = agents
                .iter()
                .zip(actions)
                .filter(|(a, &u)| u == LOAD && adjacent(a.pos, food.pos))
                .map(|(a, _)| a.level)
                .sum();
            if power > 0 && power >= food.level {
                food.collected = true;
                reward += food.level as f64 / total_food as f64;
            }
        }
        self.state.t += 1;
        let terminal = self.state.foods.iter().all(|f| f.collected);
        let done = terminal || self.state.t >= self.cfg.max_steps;
        self.running = !done;
        Ok(StepResult {
            next: self.observation(),
            reward,
            done,
            terminal,
        })
    }
}
