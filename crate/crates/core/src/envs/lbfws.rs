//! Level-based foraging where delivering food to the central landmark
//! extends the episode.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_count, discrete, Env, EnvError, Step};
use crate::hiergraph::CommRange;
use crate::msgpass::{ObsSchema, RawObs};
use crate::policy::ActionSpace;

const PLACEMENT_TRIES: usize = 1000;
pub const NUM_ACTIONS: usize = 8;
const CHANNELS: usize = 3;
const AUX: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LbfwsAction {
    None,
    Up,
    Down,
    Left,
    Right,
    Eat,
    Pick,
    Delivery,
}

impl LbfwsAction {
    pub const ALL: [LbfwsAction; NUM_ACTIONS] = [
        LbfwsAction::None,
        LbfwsAction::Up,
        LbfwsAction::Down,
        LbfwsAction::Left,
        LbfwsAction::Right,
        LbfwsAction::Eat,
        LbfwsAction::Pick,
        LbfwsAction::Delivery,
    ];

    pub fn encode(self) -> Vec<f64> {
        vec![Self::ALL.iter().position(|&a| a == self).unwrap() as f64]
    }

    fn delta(self) -> Option<(isize, isize)> {
        match self {
            LbfwsAction::Up => Some((0, -1)),
            LbfwsAction::Down => Some((0, 1)),
            LbfwsAction::Left => Some((-1, 0)),
            LbfwsAction::Right => Some((1, 0)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LbfwsPreset {
    Mini,
    Easy,
    Medium,
    Hard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LbfwsConfig {
    pub size: usize,
    pub agents: usize,
    pub level1_items: usize,
    pub level2_items: usize,
    /// Absolute step limit `T`.
    pub horizon: usize,
    /// Initial survival counter `T_s`.
    pub survival: usize,
    pub k_surv: usize,
    pub sight: usize,
    /// Spawn a replacement whenever an item is consumed.
    pub respawn: bool,
}

impl LbfwsPreset {
    pub fn config(self) -> LbfwsConfig {
        let (size, agents, items, horizon, survival) = match self {
            LbfwsPreset::Mini => (5, 2, (2, 0), 150, 60),
            LbfwsPreset::Easy => (9, 10, (4, 4), 500, 100),
            LbfwsPreset::Medium => (12, 10, (5, 5), 500, 100),
            LbfwsPreset::Hard => (15, 10, (6, 6), 500, 100),
        };
        LbfwsConfig {
            size,
            agents,
            level1_items: items.0,
            level2_items: items.1,
            horizon,
            survival,
            k_surv: 10,
            sight: 2,
            respawn: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Food {
    pub pos: [usize; 2],
    pub level: usize,
    pub value: f64,
}

impl Food {
    fn of_level(pos: [usize; 2], level: usize) -> Self {
        Self {
            pos,
            level,
            value: level as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbfwsState {
    pub agents: Vec<[usize; 2]>,
    pub levels: Vec<usize>,
    pub carry: Vec<Option<Food>>,
    pub food: Vec<Food>,
    pub t: usize,
    pub t_s: usize,
    /// Value consumed (eaten) so far and value ever placed on the grid.
    pub consumed: f64,
    pub spawned: f64,
}

#[derive(Debug, Clone)]
pub struct Lbfws {
    cfg: LbfwsConfig,
    state: LbfwsState,
}

fn adjacent(a: [usize; 2], b: [usize; 2]) -> bool {
    a[0].abs_diff(b[0]) + a[1].abs_diff(b[1]) == 1
}

impl Lbfws {
    pub fn new(cfg: LbfwsConfig) -> Result<Self, EnvError> {
        let cells = cfg.size * cfg.size;
        if cfg.size < 3 || cfg.agents == 0 || cfg.agents + cfg.level1_items + cfg.level2_items >= cells {
            return Err(EnvError::Config(format!(
                "{} agents and {} items do not fit a {}x{} grid",
                cfg.agents,
                cfg.level1_items + cfg.level2_items,
                cfg.size,
                cfg.size
            )));
        }
        if cfg.horizon == 0 || cfg.survival == 0 {
            return Err(EnvError::Config("horizon and survival must be positive".into()));
        }
        let state = LbfwsState {
            agents: vec![[0, 0]; cfg.agents],
            levels: vec![1; cfg.agents],
            carry: vec![None; cfg.agents],
            food: Vec::new(),
            t: 0,
            t_s: cfg.survival,
            consumed: 0.0,
            spawned: 0.0,
        };
        Ok(Self { cfg, state })
    }

    pub fn config(&self) -> &LbfwsConfig {
        &self.cfg
    }

    pub fn state(&self) -> &LbfwsState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut LbfwsState {
        &mut self.state
    }

    pub fn landmark(&self) -> [usize; 2] {
        [self.cfg.size / 2, self.cfg.size / 2]
    }

    fn occupied(&self, p: [usize; 2]) -> bool {
        p == self.landmark() || self.state.agents.contains(&p) || self.state.food.iter().any(|f| f.pos == p)
    }

    fn free_cell(&self, rng: &mut ChaCha8Rng, what: &'static str) -> Result<[usize; 2], EnvError> {
        for _ in 0..PLACEMENT_TRIES {
            let p = [rng.random_range(0..self.cfg.size), rng.random_range(0..self.cfg.size)];
            if !self.occupied(p) {
                return Ok(p);
            }
        }
        Err(EnvError::Placement {
            what,
            tries: PLACEMENT_TRIES,
        })
    }

    fn spawn(&mut self, level: usize, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        let pos = self.free_cell(rng, "food")?;
        let food = Food::of_level(pos, level);
        self.state.spawned += food.value;
        self.state.food.push(food);
        Ok(())
    }

    fn respawn(&mut self, level: usize, rng: &mut ChaCha8Rng) {
        if self.cfg.respawn {
            // a full grid simply skips the replacement
            let _ = self.spawn(level, rng);
        }
    }

    /// First item (in storage order) next to the agent.
    fn target(&self, agent: usize) -> Option<usize> {
        let p = self.state.agents[agent];
        self.state.food.iter().position(|f| adjacent(f.pos, p))
    }

    /// Agents acting on each item: `(item, participants)`.
    fn groups(&self, who: &[usize]) -> Vec<(usize, Vec<usize>)> {
        let mut out: Vec<(usize, Vec<usize>)> = Vec::new();
        for &i in who {
            if let Some(f) = self.target(i) {
                match out.iter_mut().find(|(g, _)| *g == f) {
                    Some((_, members)) => members.push(i),
                    None => out.push((f, vec![i])),
                }
            }
        }
        out.sort_by_key(|(f, _)| *f);
        out
    }

    fn remove_items(&mut self, mut items: Vec<usize>) -> Vec<Food> {
        items.sort_unstable();
        items.iter().rev().map(|&i| self.state.food.remove(i)).collect()
    }
}

impl Env for Lbfws {
    fn num_agents(&self) -> usize {
        self.cfg.agents
    }

    fn obs_schema(&self) -> ObsSchema {
        ObsSchema::Grid {
            channels: CHANNELS,
            side: 2 * self.cfg.sight + 1,
            aux: AUX,
        }
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(NUM_ACTIONS)
    }

    fn comm_range(&self) -> CommRange {
        CommRange::Chebyshev(self.cfg.sight as f64)
    }

    fn max_steps(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        let n = self.cfg.agents;
        self.state = LbfwsState {
            agents: Vec::with_capacity(n),
            levels: vec![1; n],
            carry: vec![None; n],
            food: Vec::new(),
            t: 0,
            t_s: self.cfg.survival,
            consumed: 0.0,
            spawned: 0.0,
        };
        for _ in 0..n {
            let p = self.free_cell(rng, "agent")?;
            self.state.agents.push(p);
        }
        for _ in 0..self.cfg.level1_items {
            self.spawn(1, rng)?;
        }
        for _ in 0..self.cfg.level2_items {
            self.spawn(2, rng)?;
        }
        Ok(())
    }

    fn observe(&self) -> Vec<RawObs> {
        let s = self.cfg.sight as isize;
        let side = (2 * s + 1) as usize;
        let size = self.cfg.size as isize;
        let lm = self.landmark();
        (0..self.cfg.agents)
            .map(|i| {
                let [x, y] = self.state.agents[i];
                let mut grid = vec![0.0; CHANNELS * side * side];
                for dy in -s..=s {
                    for dx in -s..=s {
                        let (cx, cy) = (x as isize + dx, y as isize + dy);
                        let cell = ((dy + s) as usize) * side + (dx + s) as usize;
                        if cx < 0 || cy < 0 || cx >= size || cy >= size {
                            grid[cell] = -1.0;
                            continue;
                        }
                        let p = [cx as usize, cy as usize];
                        for (j, a) in self.state.agents.iter().enumerate() {
                            if *a == p {
                                grid[cell] += self.state.levels[j] as f64;
                                if let Some(f) = self.state.carry[j] {
                                    grid[2 * side * side + cell] += f.value;
                                }
                            }
                        }
                        for f in &self.state.food {
                            if f.pos == p {
                                grid[side * side + cell] = f.level as f64;
                            }
                        }
                        if p == lm {
                            grid[2 * side * side + cell] += 1.0;
                        }
                    }
                }
                let n = self.cfg.size as f64;
                let vector = vec![
                    self.state.t as f64 / self.cfg.horizon as f64,
                    self.state.t_s as f64 / self.cfg.survival as f64,
                    (lm[0] as f64 - x as f64) / n,
                    (lm[1] as f64 - y as f64) / n,
                ];
                RawObs { grid, vector }
            })
            .collect()
    }

    fn positions(&self) -> Vec<[f64; 2]> {
        let c = (self.cfg.size as f64 - 1.0) / 2.0;
        self.state.agents.iter().map(|p| [p[0] as f64 - c, p[1] as f64 - c]).collect()
    }

    fn step(&mut self, actions: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let n = self.cfg.agents;
        check_count(actions, n)?;
        let acts: Vec<LbfwsAction> = actions
            .iter()
            .enumerate()
            .map(|(i, a)| discrete(i, a, NUM_ACTIONS).map(|k| LbfwsAction::ALL[k]))
            .collect::<Result<_, _>>()?;
        let mut rewards = vec![0.0; n];

        // pick; agents already carrying are ignored
        let pickers: Vec<usize> = (0..n).filter(|&i| acts[i] == LbfwsAction::Pick && self.state.carry[i].is_none()).collect();
        let mut picked = Vec::new();
        for (item, members) in self.groups(&pickers) {
            let strength: usize = members.iter().map(|&i| self.state.levels[i]).sum();
            if strength >= self.state.food[item].level {
                self.state.carry[members[0]] = Some(self.state.food[item]);
                picked.push(item);
            }
        }
        self.remove_items(picked);

        // eat: carried items first, then items on the grid
        let mut eaten_levels = Vec::new();
        for i in 0..n {
            if acts[i] == LbfwsAction::Eat {
                if let Some(f) = self.state.carry[i].take() {
                    rewards[i] += f.value;
                    self.state.consumed += f.value;
                    eaten_levels.push(f.level);
                }
            }
        }
        let eaters: Vec<usize> = (0..n).filter(|&i| acts[i] == LbfwsAction::Eat && self.state.carry[i].is_none()).collect();
        let mut eaten = Vec::new();
        for (item, members) in self.groups(&eaters) {
            let f = self.state.food[item];
            let strength: usize = members.iter().map(|&i| self.state.levels[i]).sum();
            if strength >= f.level {
                for &i in &members {
                    rewards[i] += f.value / members.len() as f64;
                }
                self.state.consumed += f.value;
                eaten.push(item);
            }
        }
        for f in self.remove_items(eaten) {
            eaten_levels.push(f.level);
        }

        // delivery near the landmark
        let lm = self.landmark();
        for i in 0..n {
            let p = self.state.agents[i];
            let near = p[0].abs_diff(lm[0]).max(p[1].abs_diff(lm[1])) <= 1;
            if acts[i] == LbfwsAction::Delivery && near {
                if let Some(f) = self.state.carry[i].take() {
                    self.state.t_s += (f.value * self.cfg.k_surv as f64).round() as usize;
                    eaten_levels.push(f.level);
                }
            }
        }

        // movement; blocked or conflicting moves become no-ops
        let size = self.cfg.size as isize;
        let targets: Vec<[usize; 2]> = (0..n)
            .map(|i| {
                let p = self.state.agents[i];
                let Some((dx, dy)) = acts[i].delta() else { return p };
                let (x, y) = (p[0] as isize + dx, p[1] as isize + dy);
                if x < 0 || y < 0 || x >= size || y >= size {
                    return p;
                }
                let q = [x as usize, y as usize];
                if self.state.agents.contains(&q) || self.state.food.iter().any(|f| f.pos == q) {
                    return p;
                }
                q
            })
            .collect();
        for i in 0..n {
            let clash = (0..n).any(|j| j != i && targets[j] == targets[i]);
            if !clash {
                self.state.agents[i] = targets[i];
            }
        }

        for level in eaten_levels {
            self.respawn(level, rng);
        }
        self.state.t += 1;
        self.state.t_s = self.state.t_s.saturating_sub(1);
        let done = self.state.t_s == 0 || self.state.t >= self.cfg.horizon;
        Ok(Step { rewards, done })
    }
}
