//! Deliberately naive recomputation of every reward rule, written from the
//! definitions with plain loops over absolute time.

use crate::rewards::{EpisodeRewards, RewardFlags, Truncation, TruncationScheme};

pub struct RewardQuery<'a> {
    pub episode: &'a EpisodeRewards,
    pub alpha: usize,
    pub k: usize,
    /// `[j][s]`, or `[j][w]` without sub-managers.
    pub manager_values: &'a [Vec<f64>],
    /// `[i][w]`; unused without sub-managers.
    pub sub_values: &'a [Vec<f64>],
    pub gamma: f64,
    pub gamma_s: f64,
    /// `None` selects the static worker reward.
    pub worker_scheme: Option<TruncationScheme>,
    pub flags: RewardFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceRewards {
    pub manager: Vec<Vec<Option<f64>>>,
    pub manager_adv: Vec<Vec<Option<f64>>>,
    /// Empty without sub-managers.
    pub sub: Vec<Vec<f64>>,
    pub worker: Vec<Vec<f64>>,
}

/// Advantage as the explicit discounted sum of future residuals.
pub fn reference_advantage(rewards: &[f64], values: &[f64], bootstrap: f64, gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    let value_at = |i: usize| if i < n { values[i] } else { bootstrap };
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut weight = 1.0;
            for l in t..n {
                total += weight * (rewards[l] + gamma * value_at(l + 1) - values[l]);
                weight *= gamma * lambda;
            }
            total
        })
        .collect()
}

fn steps_in(len: usize, start: usize, period: usize) -> usize {
    let mut count = 0;
    for t in 0..len {
        if t >= start && t < start + period {
            count += 1;
        }
    }
    count
}

pub fn reference_rewards(q: &RewardQuery<'_>) -> ReferenceRewards {
    let ep = q.episode;
    let len = ep.external.len();
    let nw = ep.num_workers;
    let two_level = ep.num_submanagers == 0;
    let period = if two_level { q.alpha } else { q.alpha * q.k };
    let n_mgr = len.div_ceil(period);
    let width = if two_level { nw } else { ep.num_submanagers };

    // manager rewards
    let mut manager = vec![vec![None; width]; n_mgr];
    for (j, row) in manager.iter_mut().enumerate() {
        let emit = j * period;
        for (x, slot) in row.iter_mut().enumerate() {
            let mut members = Vec::new();
            for w in 0..nw {
                let belongs = if two_level { w == x } else { ep.supervisors[emit][w] == x };
                if belongs {
                    members.push(w);
                }
            }
            if members.is_empty() {
                continue;
            }
            let mut total = 0.0;
            for &w in &members {
                for t in 0..len {
                    if t / period == j {
                        total += ep.external[t][w];
                    }
                }
            }
            *slot = Some(total / members.len() as f64);
        }
    }

    // one-step manager advantages, terminal after the last interval
    let mut manager_adv = vec![vec![None; width]; n_mgr];
    for j in 0..n_mgr {
        for x in 0..width {
            if let Some(r) = manager[j][x] {
                let next = if j + 1 < n_mgr { q.manager_values[j + 1][x] } else { 0.0 };
                manager_adv[j][x] = Some(r + q.gamma * next - q.manager_values[j][x]);
            }
        }
    }

    let mut worker = vec![vec![0.0; nw]; len];
    let mut sub = Vec::new();
    if two_level {
        for t in 0..len {
            let j = t / period;
            let span = steps_in(len, j * period, period) as f64;
            for w in 0..nw {
                worker[t][w] = manager_adv[j][w].unwrap() / span;
            }
        }
    } else {
        let n_sub = len.div_ceil(q.alpha);
        sub = vec![vec![0.0; nw]; n_sub];
        for t in (0..len).step_by(q.alpha) {
            let i = t / q.alpha;
            let emit = t - t % period;
            for w in 0..nw {
                let mut local = 0.0;
                for u in 0..len {
                    if u / q.alpha == i {
                        local += ep.external[u][w];
                    }
                }
                sub[i][w] = if q.flags.external_only {
                    local
                } else {
                    let s0 = ep.supervisors[emit][w];
                    let a = manager_adv[emit / period][s0].unwrap();
                    if q.flags.no_local {
                        a / q.k as f64
                    } else {
                        a / q.k as f64 + local
                    }
                };
            }
        }
        let v = |i: usize, w: usize| if i < n_sub { q.sub_values[i][w] } else { 0.0 };
        for t in 0..len {
            let i = t / q.alpha;
            let emit = t - t % period;
            let span = steps_in(len, i * q.alpha, q.alpha) as f64;
            for w in 0..nw {
                let inner = match q.worker_scheme {
                    None => sub[i][w] + q.gamma_s * v(i + 1, w) - v(i, w),
                    Some(scheme) => {
                        let limit = scheme.t_star.unwrap_or(usize::MAX);
                        let bracket = |ok: bool| if ok { 1.0 } else { 0.0 };
                        match scheme.variant {
                            Truncation::None => sub[i][w],
                            Truncation::SubManagerScale => {
                                // sub-manager steps elapsed since the manager emission
                                let here = (i * q.alpha - emit) / q.alpha;
                                sub[i][w] + q.gamma_s * v(i + 1, w) * bracket(here < limit) - v(i, w) * bracket(here <= limit)
                            }
                            Truncation::WorkerScale => {
                                let elapsed = t - emit;
                                let crosses = (t + 1) % q.alpha == 0 || t + 1 == len;
                                let next = if crosses { v(i + 1, w) } else { v(i, w) };
                                sub[i][w] + q.gamma_s * next * bracket(elapsed < limit) - v(i, w) * bracket(elapsed <= limit)
                            }
                        }
                    }
                };
                worker[t][w] = inner / span;
            }
        }
    }
    for t in 0..len {
        for w in 0..nw {
            if q.flags.external_only {
                worker[t][w] = ep.external[t][w];
            } else if q.flags.full_local {
                worker[t][w] += ep.external[t][w];
            }
        }
    }
    ReferenceRewards {
        manager,
        manager_adv,
        sub,
        worker,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_batch_gives_zero_everywhere() {
        let ep = EpisodeRewards {
            num_workers: 2,
            num_submanagers: 2,
            external: vec![vec![0.0; 2]; 6],
            supervisors: vec![vec![0, 1]; 6],
        };
        let zeros = vec![vec![0.0; 2]; 6];
        let r = reference_rewards(&RewardQuery {
            episode: &ep,
            alpha: 2,
            k: 1,
            manager_values: &zeros,
            sub_values: &zeros,
            gamma: 0.99,
            gamma_s: 0.99,
            worker_scheme: Some(TruncationScheme::worker(Some(1))),
            flags: RewardFlags::default(),
        });
        assert!(r.worker.iter().flatten().all(|&x| x == 0.0));
        assert!(r.sub.iter().flatten().all(|&x| x == 0.0));
        assert!(r.manager.iter().flatten().all(|&x| x == Some(0.0)));
    }

    #[test]
    fn frozen_partition_ignores_later_moves() {
        let mut ep = EpisodeRewards {
            num_workers: 2,
            num_submanagers: 2,
            external: vec![vec![1.0, 3.0], vec![2.0, 4.0]],
            supervisors: vec![vec![0, 0], vec![0, 0]],
        };
        let v = vec![vec![0.0; 2]; 2];
        let query = |ep: &EpisodeRewards| {
            reference_rewards(&RewardQuery {
                episode: ep,
                alpha: 1,
                k: 2,
                manager_values: &v,
                sub_values: &v,
                gamma: 0.9,
                gamma_s: 0.9,
                worker_scheme: None,
                flags: RewardFlags::default(),
            })
        };
        let before = query(&ep);
        ep.supervisors[1] = vec![1, 1];
        assert_eq!(before, query(&ep));
        assert_eq!(before.manager[0], vec![Some(5.0), None]);
    }

    #[test]
    fn gae_limits() {
        let r = [0.5, -1.0, 2.0];
        let v = [0.1, 0.2, 0.3];
        let a = reference_advantage(&r, &v, 0.0, 0.9, 1.0);
        let g0 = 0.5 + 0.9 * (-1.0) + 0.81 * 2.0;
        assert!((a[0] - (g0 - 0.1)).abs() < 1e-12);
    }
}
