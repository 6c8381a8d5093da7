//! Continuous coverage: robots earn the density mass of every cell they are
//! first to visit.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_count, Env, EnvError, Step};
use crate::hiergraph::CommRange;
use crate::msgpass::{ObsSchema, RawObs};
use crate::policy::ActionSpace;

pub const OBS_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    pub robots: usize,
    /// Cells per side of the arena.
    pub cells: usize,
    pub horizon: usize,
    pub dt: f64,
    pub max_speed: f64,
    pub modes: usize,
    pub mode_std: f64,
    /// Mixture means are drawn uniformly in `[-mode_range, mode_range]^2`.
    pub mode_range: f64,
    pub comm_range: f64,
    /// Reward the visiting robot only; otherwise every robot receives the
    /// team reward of the step.
    pub individual_rewards: bool,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            robots: 3,
            cells: 16,
            horizon: 100,
            dt: 0.1,
            max_speed: 1.0,
            modes: 3,
            mode_std: 0.3,
            mode_range: 0.6,
            comm_range: 0.5,
            individual_rewards: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingState {
    pub means: Vec<[f64; 2]>,
    pub pos: Vec<[f64; 2]>,
    pub vel: Vec<[f64; 2]>,
    pub visited: Vec<bool>,
    pub t: usize,
}

#[derive(Debug, Clone)]
pub struct Sampling {
    cfg: SamplingConfig,
    state: SamplingState,
}

impl Sampling {
    pub fn new(cfg: SamplingConfig) -> Result<Self, EnvError> {
        if cfg.robots == 0 || cfg.cells == 0 || cfg.horizon == 0 || cfg.modes == 0 || cfg.mode_std <= 0.0 || cfg.dt <= 0.0 {
            return Err(EnvError::Config("sampling sizes, std and dt must be positive".into()));
        }
        let state = SamplingState {
            means: vec![[0.0; 2]; cfg.modes],
            pos: vec![[0.0; 2]; cfg.robots],
            vel: vec![[0.0; 2]; cfg.robots],
            visited: vec![false; cfg.cells * cfg.cells],
            t: 0,
        };
        Ok(Self { cfg, state })
    }

    pub fn state(&self) -> &SamplingState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut SamplingState {
        &mut self.state
    }

    pub fn cell_width(&self) -> f64 {
        2.0 / self.cfg.cells as f64
    }

    /// Cell coordinates of a point of the arena.
    pub fn cell_of(&self, p: [f64; 2]) -> (usize, usize) {
        let n = self.cfg.cells;
        let idx = |v: f64| (((v + 1.0) / self.cell_width()).floor() as isize).clamp(0, n as isize - 1) as usize;
        (idx(p[0]), idx(p[1]))
    }

    pub fn cell_center(&self, cx: usize, cy: usize) -> [f64; 2] {
        let w = self.cell_width();
        [-1.0 + (cx as f64 + 0.5) * w, -1.0 + (cy as f64 + 0.5) * w]
    }

    pub fn density(&self, p: [f64; 2]) -> f64 {
        let var = self.cfg.mode_std * self.cfg.mode_std;
        let norm = 1.0 / (2.0 * PI * var) / self.cfg.modes as f64;
        self.state
            .means
            .iter()
            .map(|m| {
                let d2 = (p[0] - m[0]).powi(2) + (p[1] - m[1]).powi(2);
                norm * (-d2 / (2.0 * var)).exp()
            })
            .sum()
    }

    /// Reward for first visiting the cell.
    pub fn cell_mass(&self, cx: usize, cy: usize) -> f64 {
        self.density(self.cell_center(cx, cy)) * self.cell_width().powi(2)
    }

    pub fn total_mass(&self) -> f64 {
        let n = self.cfg.cells;
        (0..n).flat_map(|cx| (0..n).map(move |cy| (cx, cy))).map(|(cx, cy)| self.cell_mass(cx, cy)).sum()
    }
}

impl Env for Sampling {
    fn num_agents(&self) -> usize {
        self.cfg.robots
    }

    fn obs_schema(&self) -> ObsSchema {
        ObsSchema::Vector { len: OBS_LEN }
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn comm_range(&self) -> CommRange {
        CommRange::Euclidean(self.cfg.comm_range)
    }

    fn max_steps(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        let r = self.cfg.mode_range;
        self.state = SamplingState {
            means: (0..self.cfg.modes).map(|_| [rng.random_range(-r..=r), rng.random_range(-r..=r)]).collect(),
            pos: (0..self.cfg.robots).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect(),
            vel: vec![[0.0; 2]; self.cfg.robots],
            visited: vec![false; self.cfg.cells * self.cfg.cells],
            t: 0,
        };
        Ok(())
    }

    fn observe(&self) -> Vec<RawObs> {
        let n = self.cfg.cells as isize;
        (0..self.cfg.robots)
            .map(|i| {
                let (p, v) = (self.state.pos[i], self.state.vel[i]);
                let (cx, cy) = self.cell_of(p);
                let mut vector = vec![p[0], p[1], v[0], v[1]];
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (x, y) = (cx as isize + dx, cy as isize + dy);
                        if x < 0 || y < 0 || x >= n || y >= n {
                            vector.push(-1.0);
                        } else if self.state.visited[(y * n + x) as usize] {
                            vector.push(0.0);
                        } else {
                            vector.push(self.density(self.cell_center(x as usize, y as usize)));
                        }
                    }
                }
                RawObs { grid: Vec::new(), vector }
            })
            .collect()
    }

    fn positions(&self) -> Vec<[f64; 2]> {
        self.state.pos.clone()
    }

    fn step(&mut self, actions: &[Vec<f64>], _rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        let n = self.cfg.robots;
        check_count(actions, n)?;
        for (i, a) in actions.iter().enumerate() {
            if a.len() != 2 || a.iter().any(|x| !x.is_finite()) {
                return Err(EnvError::BadAction { agent: i, action: a.clone() });
            }
        }
        let mut rewards = vec![0.0; n];
        for i in 0..n {
            let v = [actions[i][0].clamp(-1.0, 1.0) * self.cfg.max_speed, actions[i][1].clamp(-1.0, 1.0) * self.cfg.max_speed];
            let p = &mut self.state.pos[i];
            p[0] = (p[0] + v[0] * self.cfg.dt).clamp(-1.0, 1.0);
            p[1] = (p[1] + v[1] * self.cfg.dt).clamp(-1.0, 1.0);
            self.state.vel[i] = v;
        }
        // robots claim cells in index order, so ties go to the lower index
        for (i, r) in rewards.iter_mut().enumerate() {
            let (cx, cy) = self.cell_of(self.state.pos[i]);
            let idx = cy * self.cfg.cells + cx;
            if !self.state.visited[idx] {
                self.state.visited[idx] = true;
                *r = self.cell_mass(cx, cy);
            }
        }
        if !self.cfg.individual_rewards {
            let team: f64 = rewards.iter().sum();
            rewards.iter_mut().for_each(|r| *r = team);
        }
        self.state.t += 1;
        Ok(Step {
            rewards,
            done: self.state.t >= self.cfg.horizon,
        })
    }
}
