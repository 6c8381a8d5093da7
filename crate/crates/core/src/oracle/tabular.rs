//! Exact forward evaluation of tabular feudal systems.
//!
//! The state carried forward is the joint worker state plus the goals
//! currently held at every level; equal states are merged, so the cost
//! grows with the number of distinct augmented states rather than with the
//! number of trajectories.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{pairwise_sum, AlignmentReport, Identity, OracleError, FRONTIER_LIMIT};

/// Factored tabular system: each worker owns a local state, the hierarchy
/// is static.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularFeudalMdp {
    pub name: String,
    pub num_states: usize,
    pub num_actions: usize,
    /// Supervisor of each worker.
    pub partition: Vec<usize>,
    pub num_subs: usize,
    /// `[w][x]`
    pub init: Vec<Vec<f64>>,
    /// `[w][x][a][x']`
    pub transition: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[w][x][a]`
    pub reward: Vec<Vec<Vec<f64>>>,
    pub manager_goals: usize,
    pub sub_goals: usize,
    pub horizon: usize,
    pub alpha: usize,
    pub k: usize,
    pub gamma: f64,
    pub gamma_s: f64,
    pub gamma_w: f64,
}

/// Tabular policies of all three levels. The manager conditions on the
/// joint worker state, a sub-manager on its manager goal and the local
/// state of the addressed worker, a worker on its goal and local state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeudalPolicy {
    /// `[s][joint state][goal]`
    pub manager: Vec<Vec<Vec<f64>>>,
    /// `[s][manager goal][x][goal]`
    pub sub: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[w][goal][x][action]`
    pub worker: Vec<Vec<Vec<Vec<f64>>>>,
}

fn check_row(what: &str, row: &[f64]) -> Result<(), OracleError> {
    if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(OracleError::Invalid(format!("{what}: probability outside [0, 1]")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(OracleError::Invalid(format!("{what}: row sums to {total}")));
    }
    Ok(())
}

fn random_row(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}

pub(super) fn draw(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

impl TabularFeudalMdp {
    pub fn num_workers(&self) -> usize {
        self.partition.len()
    }

    pub fn period(&self) -> usize {
        self.alpha * self.k
    }

    pub fn intervals(&self) -> usize {
        self.horizon / self.period()
    }

    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.num_subs];
        for (w, &s) in self.partition.iter().enumerate() {
            cells[s].push(w);
        }
        cells
    }

    /// Structural coefficient of the manager: the number of sub-managers it
    /// addresses.
    pub fn k_m(&self) -> f64 {
        self.cells().iter().filter(|c| !c.is_empty()).count() as f64
    }

    pub fn num_joint(&self) -> usize {
        self.num_states.pow(self.num_workers() as u32)
    }

    pub fn joint_index(&self, x: &[u8]) -> usize {
        x.iter().rev().fold(0, |acc, &xi| acc * self.num_states + xi as usize)
    }

    pub fn joint_state(&self, mut j: usize) -> Vec<u8> {
        (0..self.num_workers())
            .map(|_| {
                let x = (j % self.num_states) as u8;
                j /= self.num_states;
                x
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), OracleError> {
        let w = self.num_workers();
        if w == 0 || self.num_subs == 0 || self.partition.iter().any(|&s| s >= self.num_subs) {
            return Err(OracleError::Invalid("bad partition".into()));
        }
        if self.alpha == 0 || self.k == 0 || self.horizon == 0 || self.horizon % self.period() != 0 {
            return Err(OracleError::Invalid(format!(
                "horizon {} is not a positive multiple of K*alpha = {}",
                self.horizon,
                self.period()
            )));
        }
        if self.num_states > u8::MAX as usize || self.manager_goals > u8::MAX as usize || self.sub_goals > u8::MAX as usize {
            return Err(OracleError::Invalid("alphabet too large".into()));
        }
        if self.init.len() != w || self.transition.len() != w || self.reward.len() != w {
            return Err(OracleError::Invalid("per-worker tables have the wrong length".into()));
        }
        for wi in 0..w {
            check_row(&format!("init[{wi}]"), &self.init[wi])?;
            for x in 0..self.num_states {
                for a in 0..self.num_actions {
                    check_row(&format!("transition[{wi}][{x}][{a}]"), &self.transition[wi][x][a])?;
                }
                if self.reward[wi][x].len() != self.num_actions {
                    return Err(OracleError::Invalid(format!("reward[{wi}][{x}] has the wrong length")));
                }
            }
        }
        Ok(())
    }

    /// Preconditions of the manager identity that this model violates.
    pub fn homogeneity_violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let same = |f: &dyn Fn(usize) -> bool| (1..self.num_workers()).all(f);
        if !same(&|w| self.init[w] == self.init[0] && self.transition[w] == self.transition[0] && self.reward[w] == self.reward[0]) {
            out.push("workers are not homogeneous (local dynamics or rewards differ)".into());
        }
        let sizes: Vec<usize> = self.cells().iter().map(Vec::len).filter(|&n| n > 0).collect();
        if sizes.windows(2).any(|p| p[0] != p[1]) {
            out.push(format!("sub-manager cells differ in size {sizes:?}"));
        }
        out
    }
}

impl FeudalPolicy {
    /// Random full-support policies. Sub-managers share one table and
    /// workers share one table; the manager table differs per sub-manager.
    pub fn random(mdp: &TabularFeudalMdp, rng: &mut ChaCha8Rng) -> Self {
        let manager = (0..mdp.num_subs)
            .map(|_| (0..mdp.num_joint()).map(|_| random_row(mdp.manager_goals, rng)).collect())
            .collect();
        let sub_table: Vec<Vec<Vec<f64>>> = (0..mdp.manager_goals)
            .map(|_| (0..mdp.num_states).map(|_| random_row(mdp.sub_goals, rng)).collect())
            .collect();
        let worker_table: Vec<Vec<Vec<f64>>> = (0..mdp.sub_goals)
            .map(|_| (0..mdp.num_states).map(|_| random_row(mdp.num_actions, rng)).collect())
            .collect();
        Self {
            manager,
            sub: vec![sub_table; mdp.num_subs],
            worker: vec![worker_table; mdp.num_workers()],
        }
    }

    /// Joint policy taking each level from the given source.
    pub fn mix(manager: &Self, sub: &Self, worker: &Self) -> Self {
        Self {
            manager: manager.manager.clone(),
            sub: sub.sub.clone(),
            worker: worker.worker.clone(),
        }
    }

    pub fn validate(&self, mdp: &TabularFeudalMdp) -> Result<(), OracleError> {
        let shape_err = |what: &str| OracleError::Invalid(format!("{what} policy has the wrong shape"));
        if self.manager.len() != mdp.num_subs || self.manager.iter().any(|m| m.len() != mdp.num_joint()) {
            return Err(shape_err("manager"));
        }
        for (s, rows) in self.manager.iter().enumerate() {
            for (x, row) in rows.iter().enumerate() {
                if row.len() != mdp.manager_goals {
                    return Err(shape_err("manager"));
                }
                check_row(&format!("manager[{s}][{x}]"), row)?;
            }
        }
        if self.sub.len() != mdp.num_subs {
            return Err(shape_err("sub-manager"));
        }
        for (s, table) in self.sub.iter().enumerate() {
            if table.len() != mdp.manager_goals || table.iter().any(|t| t.len() != mdp.num_states) {
                return Err(shape_err("sub-manager"));
            }
            for row in table.iter().flatten() {
                if row.len() != mdp.sub_goals {
                    return Err(shape_err("sub-manager"));
                }
                check_row(&format!("sub[{s}]"), row)?;
            }
        }
        if self.worker.len() != mdp.num_workers() {
            return Err(shape_err("worker"));
        }
        for (w, table) in self.worker.iter().enumerate() {
            if table.len() != mdp.sub_goals || table.iter().any(|t| t.len() != mdp.num_states) {
                return Err(shape_err("worker"));
            }
            for row in table.iter().flatten() {
                if row.len() != mdp.num_actions {
                    return Err(shape_err("worker"));
                }
                check_row(&format!("worker[{w}]"), row)?;
            }
        }
        Ok(())
    }
}

type Dist = BTreeMap<Vec<u8>, f64>;

struct Engine<'a> {
    mdp: &'a TabularFeudalMdp,
    pol: &'a FeudalPolicy,
    limit: usize,
}

impl Engine<'_> {
    fn gm(&self, s: usize) -> usize {
        self.mdp.num_workers() + s
    }

    fn gs(&self, w: usize) -> usize {
        self.mdp.num_workers() + self.mdp.num_subs + w
    }

    fn guard(&self, d: &Dist) -> Result<(), OracleError> {
        if d.len() > self.limit {
            return Err(OracleError::FrontierExceeded { limit: self.limit });
        }
        Ok(())
    }

    fn initial(&self) -> Result<Dist, OracleError> {
        let width = 2 * self.mdp.num_workers() + self.mdp.num_subs;
        let mut d = Dist::from([(vec![0u8; width], 1.0)]);
        for w in 0..self.mdp.num_workers() {
            let mut next = Dist::new();
            for (key, p) in &d {
                for (x, &px) in self.mdp.init[w].iter().enumerate() {
                    if px > 0.0 {
                        let mut k = key.clone();
                        k[w] = x as u8;
                        *next.entry(k).or_default() += p * px;
                    }
                }
            }
            self.guard(&next)?;
            d = next;
        }
        Ok(d)
    }

    fn expand_manager(&self, d: Dist) -> Result<Dist, OracleError> {
        let nw = self.mdp.num_workers();
        let mut d = d;
        for s in 0..self.mdp.num_subs {
            let mut next = Dist::new();
            for (key, p) in &d {
                let joint = self.mdp.joint_index(&key[..nw]);
                for (g, &pg) in self.pol.manager[s][joint].iter().enumerate() {
                    if pg > 0.0 {
                        let mut k = key.clone();
                        k[self.gm(s)] = g as u8;
                        *next.entry(k).or_default() += p * pg;
                    }
                }
            }
            self.guard(&next)?;
            d = next;
        }
        Ok(d)
    }

    fn expand_subs(&self, d: Dist) -> Result<Dist, OracleError> {
        let mut d = d;
        for w in 0..self.mdp.num_workers() {
            let s = self.mdp.partition[w];
            let mut next = Dist::new();
            for (key, p) in &d {
                let row = &self.pol.sub[s][key[self.gm(s)] as usize][key[w] as usize];
                for (g, &pg) in row.iter().enumerate() {
                    if pg > 0.0 {
                        let mut k = key.clone();
                        k[self.gs(w)] = g as u8;
                        *next.entry(k).or_default() += p * pg;
                    }
                }
            }
            self.guard(&next)?;
            d = next;
        }
        Ok(d)
    }

    /// Advances every worker one step; returns the expected reward of each.
    fn step_workers(&self, d: Dist) -> Result<(Dist, Vec<f64>), OracleError> {
        let mut d = d;
        let mut rewards = Vec::with_capacity(self.mdp.num_workers());
        for w in 0..self.mdp.num_workers() {
            let mut terms = Vec::new();
            let mut next = Dist::new();
            for (key, p) in &d {
                let x = key[w] as usize;
                let row = &self.pol.worker[w][key[self.gs(w)] as usize][x];
                for (a, &pa) in row.iter().enumerate() {
                    if pa == 0.0 {
                        continue;
                    }
                    terms.push(p * pa * self.mdp.reward[w][x][a]);
                    for (x2, &px) in self.mdp.transition[w][x][a].iter().enumerate() {
                        if px > 0.0 {
                            let mut k = key.clone();
                            k[w] = x2 as u8;
                            *next.entry(k).or_default() += p * pa * px;
                        }
                    }
                }
            }
            self.guard(&next)?;
            rewards.push(pairwise_sum(&terms));
            d = next;
        }
        Ok((d, rewards))
    }

    fn marginal_x(&self, d: &Dist) -> Dist {
        let nw = self.mdp.num_workers();
        let mut out = Dist::new();
        for (key, p) in d {
            *out.entry(key[..nw].to_vec()).or_default() += p;
        }
        out
    }

    /// Expected per-step rewards `[t][w]` and the joint-state distribution
    /// at every manager emission.
    fn forward(&self) -> Result<(Vec<Vec<f64>>, Vec<Dist>), OracleError> {
        let mut d = self.initial()?;
        let mut rewards = Vec::with_capacity(self.mdp.horizon);
        let mut boundaries = Vec::new();
        for t in 0..self.mdp.horizon {
            if t % self.mdp.period() == 0 {
                boundaries.push(self.marginal_x(&d));
                d = self.expand_manager(d)?;
            }
            if t % self.mdp.alpha == 0 {
                d = self.expand_subs(d)?;
            }
            let (next, r) = self.step_workers(d)?;
            rewards.push(r);
            d = next;
        }
        Ok((rewards, boundaries))
    }

    /// Runs one manager interval from a fixed joint state and joint goal.
    /// Returns the expected summed reward per worker and the distribution
    /// of the joint state at the end.
    fn interval(&self, x: &[u8], goals: &[u8]) -> Result<(Vec<f64>, Dist), OracleError> {
        let nw = self.mdp.num_workers();
        let mut key = vec![0u8; 2 * nw + self.mdp.num_subs];
        key[..nw].copy_from_slice(x);
        key[nw..nw + self.mdp.num_subs].copy_from_slice(goals);
        let mut d = Dist::from([(key, 1.0)]);
        let mut per_step = Vec::new();
        for t in 0..self.mdp.period() {
            if t % self.mdp.alpha == 0 {
                d = self.expand_subs(d)?;
            }
            let (next, r) = self.step_workers(d)?;
            per_step.push(r);
            d = next;
        }
        let totals = (0..nw).map(|w| pairwise_sum(&per_step.iter().map(|r| r[w]).collect::<Vec<_>>())).collect();
        Ok((totals, self.marginal_x(&d)))
    }
}

/// Exact returns of one joint policy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Returns {
    /// Discounted return of each worker on the manager time scale.
    pub per_worker: Vec<f64>,
    /// Mean over workers of `per_worker`.
    pub eta: f64,
    /// Manager return towards each sub-manager.
    pub per_sub: Vec<f64>,
    /// Sum of `per_sub`.
    pub eta_m: f64,
    /// Expected external reward `[t][w]`.
    pub step_rewards: Vec<Vec<f64>>,
}

fn returns_from(mdp: &TabularFeudalMdp, step_rewards: Vec<Vec<f64>>) -> Returns {
    let p = mdp.period();
    let per_worker: Vec<f64> = (0..mdp.num_workers())
        .map(|w| {
            let terms: Vec<f64> = (0..mdp.horizon).map(|t| mdp.gamma.powi((t / p) as i32) * step_rewards[t][w]).collect();
            pairwise_sum(&terms)
        })
        .collect();
    let eta = pairwise_sum(&per_worker) / per_worker.len() as f64;
    let per_sub: Vec<f64> = mdp
        .cells()
        .iter()
        .map(|cell| {
            if cell.is_empty() {
                return 0.0;
            }
            pairwise_sum(&cell.iter().map(|&w| per_worker[w]).collect::<Vec<_>>()) / cell.len() as f64
        })
        .collect();
    let eta_m = pairwise_sum(&per_sub);
    Returns {
        per_worker,
        eta,
        per_sub,
        eta_m,
        step_rewards,
    }
}

fn checked<'a>(mdp: &'a TabularFeudalMdp, pol: &'a FeudalPolicy) -> Result<Engine<'a>, OracleError> {
    mdp.validate()?;
    pol.validate(mdp)?;
    Ok(Engine {
        mdp,
        pol,
        limit: FRONTIER_LIMIT,
    })
}

pub fn enumerate_returns(mdp: &TabularFeudalMdp, pol: &FeudalPolicy) -> Result<Returns, OracleError> {
    enumerate_returns_bounded(mdp, pol, FRONTIER_LIMIT)
}

pub fn enumerate_returns_bounded(mdp: &TabularFeudalMdp, pol: &FeudalPolicy, limit: usize) -> Result<Returns, OracleError> {
    let mut engine = checked(mdp, pol)?;
    engine.limit = limit;
    let (rewards, _) = engine.forward()?;
    Ok(returns_from(mdp, rewards))
}

/// Checks that the manager return equals `k_m` times the global return.
pub fn verify_manager_alignment(mdp: &TabularFeudalMdp, pol: &FeudalPolicy) -> Result<AlignmentReport, OracleError> {
    let r = enumerate_returns(mdp, pol)?;
    let k_m = mdp.k_m();
    Ok(AlignmentReport {
        mdp: mdp.name.clone(),
        eta: r.eta,
        eta_m: r.eta_m,
        k_m,
        identities: vec![Identity::new("manager: eta_m = k_m * eta", r.eta_m, k_m * r.eta, Some(1e-9))],
        violations: mdp.homogeneity_violations(),
    })
}

fn joint_goal(mdp: &TabularFeudalMdp, mut g: usize) -> Vec<u8> {
    (0..mdp.num_subs)
        .map(|_| {
            let x = (g % mdp.manager_goals) as u8;
            g /= mdp.manager_goals;
            x
        })
        .collect()
}

/// Manager action values of `pol`: `q[j][s][joint state][joint goal]` and
/// `v[j][s][joint state]`, with `v[J] = 0`.
#[allow(clippy::type_complexity)]
fn manager_values(engine: &Engine<'_>) -> Result<(Vec<Vec<Vec<Vec<f64>>>>, Vec<Vec<Vec<f64>>>), OracleError> {
    let mdp = engine.mdp;
    let n_goal = mdp.manager_goals.pow(mdp.num_subs as u32);
    let cells = mdp.cells();
    let jn = mdp.intervals();
    let mut q = vec![vec![vec![vec![0.0; n_goal]; mdp.num_joint()]; mdp.num_subs]; jn];
    let mut v = vec![vec![vec![0.0; mdp.num_joint()]; mdp.num_subs]; jn + 1];
    for j in (0..jn).rev() {
        for xi in 0..mdp.num_joint() {
            let x = mdp.joint_state(xi);
            for gi in 0..n_goal {
                let goals = joint_goal(mdp, gi);
                let (totals, next) = engine.interval(&x, &goals)?;
                for (s, cell) in cells.iter().enumerate() {
                    if cell.is_empty() {
                        continue;
                    }
                    let r = cell.iter().map(|&w| totals[w]).sum::<f64>() / cell.len() as f64;
                    let cont: Vec<f64> = next.iter().map(|(x2, p)| p * v[j + 1][s][mdp.joint_index(x2)]).collect();
                    q[j][s][xi][gi] = r + mdp.gamma * pairwise_sum(&cont);
                }
            }
            for s in 0..mdp.num_subs {
                let terms: Vec<f64> = (0..n_goal)
                    .map(|gi| {
                        let goals = joint_goal(mdp, gi);
                        let p: f64 = (0..mdp.num_subs).map(|s2| engine.pol.manager[s2][xi][goals[s2] as usize]).product();
                        p * q[j][s][xi][gi]
                    })
                    .collect();
                v[j][s][xi] = pairwise_sum(&terms);
            }
        }
    }
    Ok((q, v))
}

/// Checks `eta(new) = eta(old) + eta_adv(new) / k_m`, where the advantage
/// is the one of the old manager and the lower levels are shared.
pub fn verify_lemma1(mdp: &TabularFeudalMdp, old: &FeudalPolicy, new: &FeudalPolicy) -> Result<AlignmentReport, OracleError> {
    let old_engine = checked(mdp, old)?;
    let new_engine = checked(mdp, new)?;
    let (old_rewards, old_bounds) = old_engine.forward()?;
    let (new_rewards, new_bounds) = new_engine.forward()?;
    let old_r = returns_from(mdp, old_rewards);
    let new_r = returns_from(mdp, new_rewards);
    let (q, v) = manager_values(&old_engine)?;
    let n_goal = mdp.manager_goals.pow(mdp.num_subs as u32);

    let mut adv_terms = Vec::new();
    for (j, dist) in new_bounds.iter().enumerate() {
        let disc = mdp.gamma.powi(j as i32);
        for (x, p) in dist {
            let xi = mdp.joint_index(x);
            for gi in 0..n_goal {
                let goals = joint_goal(mdp, gi);
                let pg: f64 = (0..mdp.num_subs).map(|s| new.manager[s][xi][goals[s] as usize]).product();
                for s in 0..mdp.num_subs {
                    adv_terms.push(disc * p * pg * (q[j][s][xi][gi] - v[j][s][xi]));
                }
            }
        }
    }
    let eta_adv = pairwise_sum(&adv_terms);
    let v0: Vec<f64> = old_bounds[0]
        .iter()
        .flat_map(|(x, p)| {
            let xi = mdp.joint_index(x);
            v[0].iter().map(move |vs| p * vs[xi]).collect::<Vec<_>>()
        })
        .collect();
    let k_m = mdp.k_m();
    let mut violations = mdp.homogeneity_violations();
    if old.sub != new.sub || old.worker != new.worker {
        violations.push("old and new joint policies differ below the manager".into());
    }
    Ok(AlignmentReport {
        mdp: mdp.name.clone(),
        eta: new_r.eta,
        eta_m: new_r.eta_m,
        k_m,
        identities: vec![
            Identity::new("lemma: eta(new) = eta(old) + eta_adv / k_m", new_r.eta, old_r.eta + eta_adv / k_m, Some(1e-9)),
            Identity::new("old manager value at t=0 equals eta_m(old)", pairwise_sum(&v0), old_r.eta_m, Some(1e-9)),
        ],
        violations,
    })
}

/// Sample means and standard errors of the global and manager returns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MonteCarloEstimate {
    pub samples: usize,
    pub eta: f64,
    pub eta_se: f64,
    pub eta_m: f64,
    pub eta_m_se: f64,
}

/// Plain trajectory sampling, written independently of the exact engine.
pub fn monte_carlo(mdp: &TabularFeudalMdp, pol: &FeudalPolicy, samples: usize, rng: &mut ChaCha8Rng) -> Result<MonteCarloEstimate, OracleError> {
    mdp.validate()?;
    pol.validate(mdp)?;
    let nw = mdp.num_workers();
    let cells = mdp.cells();
    let p = mdp.period();
    let (mut sum, mut sq, mut sum_m, mut sq_m) = (0.0, 0.0, 0.0, 0.0);
    let mut ret = vec![0.0; nw];
    for _ in 0..samples {
        let mut x: Vec<u8> = (0..nw).map(|w| draw(&mdp.init[w], rng) as u8).collect();
        let mut gm = vec![0usize; mdp.num_subs];
        let mut gs = vec![0usize; nw];
        ret.iter_mut().for_each(|r| *r = 0.0);
        for t in 0..mdp.horizon {
            if t % p == 0 {
                let xi = mdp.joint_index(&x);
                for (s, g) in gm.iter_mut().enumerate() {
                    *g = draw(&pol.manager[s][xi], rng);
                }
            }
            if t % mdp.alpha == 0 {
                for w in 0..nw {
                    let s = mdp.partition[w];
                    gs[w] = draw(&pol.sub[s][gm[s]][x[w] as usize], rng);
                }
            }
            let disc = mdp.gamma.powi((t / p) as i32);
            for w in 0..nw {
                let xw = x[w] as usize;
                let a = draw(&pol.worker[w][gs[w]][xw], rng);
                ret[w] += disc * mdp.reward[w][xw][a];
                x[w] = draw(&mdp.transition[w][xw][a], rng) as u8;
            }
        }
        let eta = ret.iter().sum::<f64>() / nw as f64;
        let eta_m: f64 = cells
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.iter().map(|&w| ret[w]).sum::<f64>() / c.len() as f64)
            .sum();
        sum += eta;
        sq += eta * eta;
        sum_m += eta_m;
        sq_m += eta_m * eta_m;
    }
    let n = samples as f64;
    let se = |s: f64, q: f64| ((q / n - (s / n).powi(2)).max(0.0) / n).sqrt();
    Ok(MonteCarloEstimate {
        samples,
        eta: sum / n,
        eta_se: se(sum, sq),
        eta_m: sum_m / n,
        eta_m_se: se(sum_m, sq_m),
    })
}
