//! Hierarchical reward assignment.
//!
//! All functions work on one episode. Interval `j` of the manager covers
//! steps `[jP, min((j+1)P, T))` with `P` the manager period, interval `k` of
//! the sub-managers covers `[k alpha, min((k+1) alpha, T))`. The episode ends
//! in a terminal state, so values past the end are zero and an interval cut
//! short by termination is complete. Per-step splits divide by the realised
//! interval length so that they always sum back to the interval total.

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RewardError {
    #[error("no manager advantage for sub-manager {sub} in manager interval {interval}")]
    MissingManagerAdvantage { interval: usize, sub: usize },
    #[error("truncation scheme 'none' drops every value term; t* must be 0, got {0:?}")]
    NoneWithValues(Option<usize>),
    #[error("the 2-level reward needs a hierarchy without sub-managers")]
    NotTwoLevel,
    #[error("{what}: expected {expected} rows, found {found}")]
    Shape { what: &'static str, expected: usize, found: usize },
}

/// The reward-relevant part of a rollout for one episode.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpisodeRewards {
    pub num_workers: usize,
    pub num_submanagers: usize,
    /// External rewards `[t][w]`.
    pub external: Vec<Vec<f64>>,
    /// Supervisor of each worker at each step `[t][w]`; empty rows for a
    /// 2-level hierarchy.
    pub supervisors: Vec<Vec<usize>>,
}

impl EpisodeRewards {
    pub fn len(&self) -> usize {
        self.external.len()
    }

    pub fn is_empty(&self) -> bool {
        self.external.is_empty()
    }

    pub fn intervals(&self, period: usize) -> usize {
        self.len().div_ceil(period)
    }

    fn span(&self, start: usize, period: usize) -> std::ops::Range<usize> {
        start..(start + period).min(self.len())
    }

    fn window_sum(&self, w: usize, start: usize, period: usize) -> f64 {
        self.span(start, period).map(|t| self.external[t][w]).sum()
    }
}

/// Which sub-manager values enter the dynamic worker reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Truncation {
    /// Value index advances on the sub-manager time scale.
    SubManagerScale,
    /// Value index advances every step; the supervisor observation changes
    /// only at sub-manager boundaries.
    WorkerScale,
    /// No value terms at all.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationScheme {
    pub variant: Truncation,
    /// `None` means no truncation. Counted in sub-manager intervals for the
    /// sub-manager scale and in steps for the worker scale, from the
    /// enclosing manager emission.
    pub t_star: Option<usize>,
}

impl TruncationScheme {
    pub fn submanager(t_star: Option<usize>) -> Self {
        Self {
            variant: Truncation::SubManagerScale,
            t_star,
        }
    }

    pub fn worker(t_star: Option<usize>) -> Self {
        Self {
            variant: Truncation::WorkerScale,
            t_star,
        }
    }

    pub fn no_values() -> Self {
        Self {
            variant: Truncation::None,
            t_star: Some(0),
        }
    }

    fn within(&self, i: usize) -> f64 {
        match self.t_star {
            Some(ts) if i > ts => 0.0,
            _ => 1.0,
        }
    }
}

/// Reward ablations. `full_local` adds the external reward to every worker
/// reward, `no_local` drops the external term of the sub-manager reward, and
/// `external_only` replaces sub-manager and worker rewards with external ones.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RewardFlags {
    pub full_local: bool,
    pub no_local: bool,
    pub external_only: bool,
}

/// Manager reward per interval and sub-manager: mean over the cell frozen at
/// the emission step of each member's summed external reward. Empty cells
/// give `None`.
pub fn manager_rewards(ep: &EpisodeRewards, period: usize) -> Vec<Vec<Option<f64>>> {
    (0..ep.intervals(period))
        .map(|j| {
            let t0 = j * period;
            let sup = &ep.supervisors[t0];
            (0..ep.num_submanagers)
                .map(|s| {
                    let cell: Vec<usize> = (0..ep.num_workers).filter(|&w| sup[w] == s).collect();
                    if cell.is_empty() {
                        return None;
                    }
                    let total: f64 = cell.iter().map(|&w| ep.window_sum(w, t0, period)).sum();
                    Some(total / cell.len() as f64)
                })
                .collect()
        })
        .collect()
}

/// 2-level manager reward: each worker's own summed external reward.
pub fn manager_rewards_2level(ep: &EpisodeRewards, period: usize) -> Vec<Vec<f64>> {
    (0..ep.intervals(period))
        .map(|j| (0..ep.num_workers).map(|w| ep.window_sum(w, j * period, period)).collect())
        .collect()
}

/// Generalised advantage estimate of one trajectory. `bootstrap` is the
/// value after the last entry (zero when terminal).
pub fn estimate_advantage(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), values.len(), "rewards and values differ in length");
    let mut adv = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for i in (0..rewards.len()).rev() {
        let next = if i + 1 < values.len() { values[i + 1] } else { bootstrap };
        let delta = rewards[i] + gamma * next - values[i];
        acc = delta + gamma * lambda * acc;
        adv[i] = acc;
    }
    adv
}

/// Column-wise GAE over a `[step][entity]` grid ending in a terminal state.
/// Missing rewards count as zero in the recursion and give `None`.
pub fn grid_advantages(rewards: &[Vec<Option<f64>>], values: &[Vec<f64>], gamma: f64, lambda: f64) -> Vec<Vec<Option<f64>>> {
    let n = rewards.len();
    let width = rewards.first().map_or(0, Vec::len);
    let mut out = vec![vec![None; width]; n];
    for x in 0..width {
        let r: Vec<f64> = (0..n).map(|j| rewards[j][x].unwrap_or(0.0)).collect();
        let v: Vec<f64> = (0..n).map(|j| values[j][x]).collect();
        let a = estimate_advantage(&r, &v, 0.0, gamma, lambda);
        for j in 0..n {
            if rewards[j][x].is_some() {
                out[j][x] = Some(a[j]);
            }
        }
    }
    out
}

/// Sub-manager reward per sub-interval and worker. The manager advantage is
/// the one of the goal sent to the worker's supervisor at the enclosing
/// manager emission.
pub fn submanager_rewards(
    ep: &EpisodeRewards,
    alpha: usize,
    k: usize,
    manager_adv: &[Vec<Option<f64>>],
    flags: RewardFlags,
) -> Result<Vec<Vec<f64>>, RewardError> {
    let period = alpha * k;
    if manager_adv.len() != ep.intervals(period) {
        return Err(RewardError::Shape {
            what: "manager advantages",
            expected: ep.intervals(period),
            found: manager_adv.len(),
        });
    }
    (0..ep.intervals(alpha))
        .map(|i| {
            let ts = i * alpha;
            let j = ts / period;
            (0..ep.num_workers)
                .map(|w| {
                    let local = ep.window_sum(w, ts, alpha);
                    if flags.external_only {
                        return Ok(local);
                    }
                    let s0 = ep.supervisors[j * period][w];
                    let a = manager_adv[j][s0].ok_or(RewardError::MissingManagerAdvantage { interval: j, sub: s0 })?;
                    Ok(if flags.no_local { a / k as f64 } else { a / k as f64 + local })
                })
                .collect()
        })
        .collect()
}

fn apply_worker_flags(ep: &EpisodeRewards, out: &mut [Vec<f64>], flags: RewardFlags) {
    for (t, row) in out.iter_mut().enumerate() {
        for (w, r) in row.iter_mut().enumerate() {
            if flags.external_only {
                *r = ep.external[t][w];
            } else if flags.full_local {
                *r += ep.external[t][w];
            }
        }
    }
}

/// Static-hierarchy worker reward: the sub-manager advantage spread evenly
/// over the steps of its goal.
pub fn worker_rewards_static(ep: &EpisodeRewards, alpha: usize, sub_adv: &[Vec<f64>], flags: RewardFlags) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..ep.len())
        .map(|t| {
            let i = t / alpha;
            let len = ep.span(i * alpha, alpha).len() as f64;
            (0..ep.num_workers).map(|w| sub_adv[i][w] / len).collect()
        })
        .collect();
    apply_worker_flags(ep, &mut out, flags);
    out
}

/// Dynamic-hierarchy worker reward built from the sub-manager rewards and
/// the values of whichever sub-manager supervises the worker at each
/// boundary, truncated according to `scheme`.
#[allow(clippy::too_many_arguments)]
pub fn worker_rewards_dynamic(
    ep: &EpisodeRewards,
    alpha: usize,
    k: usize,
    scheme: TruncationScheme,
    sub_rewards: &[Vec<f64>],
    sub_values: &[Vec<f64>],
    gamma_s: f64,
    flags: RewardFlags,
) -> Result<Vec<Vec<f64>>, RewardError> {
    if scheme.variant == Truncation::None && scheme.t_star != Some(0) {
        return Err(RewardError::NoneWithValues(scheme.t_star));
    }
    let n_int = ep.intervals(alpha);
    for (what, grid) in [("sub-manager rewards", sub_rewards), ("sub-manager values", sub_values)] {
        if grid.len() != n_int {
            return Err(RewardError::Shape {
                what,
                expected: n_int,
                found: grid.len(),
            });
        }
    }
    let period = alpha * k;
    let mut out: Vec<Vec<f64>> = (0..ep.len())
        .map(|t| {
            let i = t / alpha;
            let len = ep.span(i * alpha, alpha).len() as f64;
            let tm = (t / period) * period;
            (0..ep.num_workers)
                .map(|w| {
                    let v_cur = sub_values[i][w];
                    let v_next = if i + 1 < n_int { sub_values[i + 1][w] } else { 0.0 };
                    let value_terms = match scheme.variant {
                        Truncation::None => 0.0,
                        Truncation::SubManagerScale => {
                            let kl = i - tm / alpha;
                            gamma_s * v_next * scheme.within(kl + 1) - v_cur * scheme.within(kl)
                        }
                        Truncation::WorkerScale => {
                            let u = t - tm;
                            let boundary = (t + 1) % alpha == 0 || t + 1 == ep.len();
                            let next = if boundary { v_next } else { v_cur };
                            gamma_s * next * scheme.within(u + 1) - v_cur * scheme.within(u)
                        }
                    };
                    (sub_rewards[i][w] + value_terms) / len
                })
                .collect()
        })
        .collect();
    apply_worker_flags(ep, &mut out, flags);
    Ok(out)
}

/// 2-level worker reward: the manager advantage of the worker's own goal
/// spread over the goal period.
pub fn worker_rewards_2level(
    ep: &EpisodeRewards,
    period: usize,
    manager_adv: &[Vec<f64>],
    flags: RewardFlags,
) -> Result<Vec<Vec<f64>>, RewardError> {
    if ep.num_submanagers > 0 {
        return Err(RewardError::NotTwoLevel);
    }
    let mut out: Vec<Vec<f64>> = (0..ep.len())
        .map(|t| {
            let j = t / period;
            let len = ep.span(j * period, period).len() as f64;
            (0..ep.num_workers).map(|w| manager_adv[j][w] / len).collect()
        })
        .collect();
    apply_worker_flags(ep, &mut out, flags);
    Ok(out)
}
