//! From a collected episode to per-level training samples: reward streams of
//! every level, then GAE on each level's own time scale.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::policy::Level;
use crate::rewards::{
    estimate_advantage, grid_advantages, manager_rewards, manager_rewards_2level, submanager_rewards, worker_rewards_2level,
    worker_rewards_dynamic, worker_rewards_static, EpisodeRewards, RewardFlags, TruncationScheme,
};

use super::{Decisions, Episode, Model, TrainConfig, TrainError};

/// Reward ablation switches plus the truncation used by dynamic 3-level
/// hierarchies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RewardScheme {
    pub flags: RewardFlags,
    pub truncation: TruncationScheme,
}

impl Default for RewardScheme {
    fn default() -> Self {
        Self {
            flags: RewardFlags::default(),
            truncation: TruncationScheme::worker(Some(1)),
        }
    }
}

/// The structural facts reward assignment depends on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RewardLayout {
    pub hierarchical: bool,
    pub levels: u8,
    pub alpha: usize,
    pub k: usize,
    pub dynamic: bool,
}

impl RewardLayout {
    pub fn of(model: &Model) -> Self {
        Self {
            hierarchical: model.variant.is_hierarchical(),
            levels: model.hierarchy.levels,
            alpha: model.hierarchy.alpha,
            k: model.hierarchy.k,
            dynamic: model.hierarchy.dynamic,
        }
    }

    fn three(&self) -> bool {
        self.hierarchical && self.levels == 3
    }

    fn period(&self) -> usize {
        if self.three() {
            self.alpha * self.k
        } else {
            self.alpha
        }
    }
}

/// Assigned rewards of one episode. Absent levels give empty grids.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Streams {
    /// `[j][s]` (3-level) or `[j][w]` (2-level); `None` for empty cells.
    pub manager: Vec<Vec<Option<f64>>>,
    /// `[i][w]`.
    pub sub: Vec<Vec<f64>>,
    /// `[t][w]`.
    pub worker: Vec<Vec<f64>>,
}

impl Streams {
    pub fn means(&self) -> [Option<f64>; 3] {
        let mean = |v: Vec<f64>| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
        [
            mean(self.manager.iter().flatten().flatten().copied().collect()),
            mean(self.sub.iter().flatten().copied().collect()),
            mean(self.worker.iter().flatten().copied().collect()),
        ]
    }
}

fn transpose(grid: &[Vec<f64>], width: usize) -> Vec<Vec<f64>> {
    (0..width).map(|c| grid.iter().map(|row| row[c]).collect()).collect()
}

/// Column-wise GAE over `[step][entity]` grids, terminal at the end.
fn column_advantages(rewards: &[Vec<f64>], values: &[Vec<f64>], gamma: f64, lambda: f64) -> Vec<Vec<f64>> {
    let width = rewards.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = transpose(rewards, width)
        .iter()
        .zip(transpose(values, width))
        .map(|(r, v)| estimate_advantage(r, &v, 0.0, gamma, lambda))
        .collect();
    (0..rewards.len()).map(|i| cols.iter().map(|c| c[i]).collect()).collect()
}

/// Reward streams of every level. Values are the old critics' estimates
/// recorded at collection time: `[j][row]` for the manager and `[i][w]` for
/// the sub-managers.
pub fn reward_streams(
    ep: &EpisodeRewards,
    manager_values: &[Vec<f64>],
    sub_values: &[Vec<f64>],
    layout: RewardLayout,
    scheme: RewardScheme,
    gamma: f64,
) -> Result<Streams, TrainError> {
    let flags = scheme.flags;
    if !layout.hierarchical {
        return Ok(Streams {
            worker: ep.external.clone(),
            ..Default::default()
        });
    }
    let period = layout.period();
    if !layout.three() {
        let manager = manager_rewards_2level(ep, period);
        let some: Vec<Vec<Option<f64>>> = manager.iter().map(|row| row.iter().map(|&x| Some(x)).collect()).collect();
        let td: Vec<Vec<f64>> = column_advantages(&manager, manager_values, gamma, 0.0);
        let worker = worker_rewards_2level(ep, period, &td, flags)?;
        return Ok(Streams {
            manager: some,
            sub: Vec::new(),
            worker,
        });
    }
    let manager = manager_rewards(ep, period);
    let manager_td = grid_advantages(&manager, manager_values, gamma, 0.0);
    let sub = submanager_rewards(ep, layout.alpha, layout.k, &manager_td, flags)?;
    let worker = if layout.dynamic {
        worker_rewards_dynamic(ep, layout.alpha, layout.k, scheme.truncation, &sub, sub_values, gamma, flags)?
    } else {
        let sub_td = column_advantages(&sub, sub_values, gamma, 0.0);
        worker_rewards_static(ep, layout.alpha, &sub_td, flags)
    };
    Ok(Streams { manager, sub, worker })
}

/// One training row of one level.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub episode: usize,
    pub t: usize,
    pub row: usize,
    pub goal: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub advantage: f64,
    pub ret: f64,
}

fn values(ds: &[Decisions]) -> Vec<Vec<f64>> {
    ds.iter().map(|d| d.values.clone()).collect()
}

fn sample(episode: usize, d: &Decisions, r: usize, advantage: f64) -> Sample {
    Sample {
        episode,
        t: d.t,
        row: d.rows[r],
        goal: d.goals.get(r).cloned().unwrap_or_default(),
        action: d.samples[r].clone(),
        log_prob: d.log_probs[r],
        value: d.values[r],
        advantage,
        ret: advantage + d.values[r],
    }
}

/// Reward streams and per-level samples of episode number `index`.
pub fn assign(
    ep: &Episode,
    index: usize,
    model: &Model,
    scheme: RewardScheme,
    cfg: &TrainConfig,
) -> Result<(Streams, BTreeMap<Level, Vec<Sample>>), TrainError> {
    let layout = RewardLayout::of(model);
    let (mv, sv, wv) = (values(&ep.manager), values(&ep.sub), values(&ep.worker));
    let streams = reward_streams(&ep.rewards, &mv, &sv, layout, scheme, cfg.gamma)?;
    let mut out = BTreeMap::new();
    if layout.hierarchical {
        let adv = grid_advantages(&streams.manager, &mv, cfg.gamma, cfg.lambda_upper);
        let rows = ep
            .manager
            .iter()
            .zip(&adv)
            .flat_map(|(d, a)| (0..d.rows.len()).filter_map(move |r| a[r].map(|x| sample(index, d, r, x))))
            .collect();
        out.insert(Level::Manager, rows);
    }
    if layout.three() {
        let adv = column_advantages(&streams.sub, &sv, cfg.gamma, cfg.lambda_upper);
        let rows = ep
            .sub
            .iter()
            .zip(&adv)
            .flat_map(|(d, a)| (0..d.rows.len()).map(move |r| sample(index, d, r, a[r])))
            .collect();
        out.insert(Level::SubManager, rows);
    }
    let adv = column_advantages(&streams.worker, &wv, cfg.gamma, cfg.lambda_worker);
    let rows = ep
        .worker
        .iter()
        .zip(&adv)
        .flat_map(|(d, a)| (0..d.rows.len()).map(move |r| sample(index, d, r, a[r])))
        .collect();
    out.insert(Level::Worker, rows);
    Ok((streams, out))
}
