//! Episode collection: build the step's graph, emit goals on schedule, act,
//! step the environment and keep everything the update needs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::envs::Env;
use crate::hiergraph::{HierGraph, HierarchyTracker};
use crate::msgpass::{GraphBatch, RawObs, Snapshot};
use crate::nn::Mat;
use crate::policy::{ActionSpace, Level};
use crate::rewards::EpisodeRewards;

use super::{Model, TrainError};

/// Decisions of one level at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decisions {
    pub t: usize,
    /// Sub-manager rows for the 3-level manager, worker rows otherwise.
    pub rows: Vec<usize>,
    /// Held goal fed to each row; empty for levels without one.
    pub goals: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub obs: Vec<Vec<RawObs>>,
    pub graphs: Vec<HierGraph>,
    pub positions: Vec<Vec<[f64; 2]>>,
    /// Actions as applied to the environment.
    pub actions: Vec<Vec<Vec<f64>>>,
    pub rewards: EpisodeRewards,
    pub manager: Vec<Decisions>,
    pub sub: Vec<Decisions>,
    pub worker: Vec<Decisions>,
    pub sigma: f64,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn decisions(&self, level: Level) -> &[Decisions] {
        match level {
            Level::Manager => &self.manager,
            Level::SubManager => &self.sub,
            Level::Worker => &self.worker,
        }
    }

    pub fn agent_returns(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.rewards.num_workers];
        for row in &self.rewards.external {
            for (acc, r) in out.iter_mut().zip(row) {
                *acc += r;
            }
        }
        out
    }

    pub fn team_return(&self) -> f64 {
        self.agent_returns().iter().sum()
    }
}

fn goal_mat(goals: &[Vec<f64>], d: usize) -> Mat {
    Mat::from_vec(goals.len(), d, goals.iter().flatten().copied().collect())
}

/// Plays one episode with the model. `greedy` takes distribution modes for
/// goals and actions.
pub fn run_episode(model: &Model, env: &mut dyn Env, sigma: f64, greedy: bool, rng: &mut ChaCha8Rng) -> Result<Episode, TrainError> {
    let env_err = |source| TrainError::Env { episode: 0, source };
    env.reset(rng).map_err(env_err)?;
    let n = env.num_agents();
    let mut tracker = HierarchyTracker::new(model.hierarchy.clone(), env.comm_range());
    let three = model.three_level();
    let d = model.goal_dim;
    let sched = &model.schedule;
    let mut ep = Episode {
        obs: Vec::new(),
        graphs: Vec::new(),
        positions: Vec::new(),
        actions: Vec::new(),
        rewards: EpisodeRewards {
            num_workers: n,
            num_submanagers: if three { model.hierarchy.num_submanagers() } else { 0 },
            external: Vec::new(),
            supervisors: Vec::new(),
        },
        manager: Vec::new(),
        sub: Vec::new(),
        worker: Vec::new(),
        sigma,
    };
    let mut manager_goals: Vec<Vec<f64>> = Vec::new();
    let mut sub_goals: Vec<Vec<f64>> = Vec::new();
    let workers: Vec<usize> = (0..n).collect();
    for t in 0..env.max_steps() {
        let obs = env.observe();
        let positions = env.positions();
        let graph = model.graph(&mut tracker, &positions);
        let batch = GraphBatch::new(model.schema, &[Snapshot { obs: &obs, graph: &graph }])?;
        let decide = |level: Level, rows: Vec<usize>, goals: Vec<Vec<f64>>, rng: &mut ChaCha8Rng| -> Result<Decisions, TrainError> {
            let slot = model.slot(level).expect("level exists in the model");
            let gm = (!goals.is_empty()).then(|| goal_mat(&goals, d));
            let ds = slot.net.act(&slot.store, sched, level, t, &batch, &rows, gm.as_ref(), sigma, greedy, rng)?;
            let mut out = Decisions {
                t,
                rows,
                goals,
                samples: Vec::with_capacity(ds.len()),
                log_probs: Vec::with_capacity(ds.len()),
                values: Vec::with_capacity(ds.len()),
            };
            for dcs in ds {
                out.samples.push(dcs.sample);
                out.log_probs.push(dcs.log_prob);
                out.values.push(dcs.value);
            }
            Ok(out)
        };
        if model.variant.is_hierarchical() && sched.emits(Level::Manager, t) {
            let rows = if three { (0..graph.num_submanagers).collect() } else { workers.clone() };
            let dm = decide(Level::Manager, rows, Vec::new(), rng)?;
            manager_goals = dm.samples.clone();
            ep.manager.push(dm);
        }
        if three && sched.emits(Level::SubManager, t) {
            let goals = workers.iter().map(|&w| manager_goals[graph.partition[w]].clone()).collect();
            let ds = decide(Level::SubManager, workers.clone(), goals, rng)?;
            sub_goals = ds.samples.clone();
            ep.sub.push(ds);
        }
        let goals = if three {
            sub_goals.clone()
        } else if model.variant.is_hierarchical() {
            manager_goals.clone()
        } else {
            Vec::new()
        };
        let dw = decide(Level::Worker, workers.clone(), goals, rng)?;
        let actions: Vec<Vec<f64>> = match model.worker_space {
            ActionSpace::Discrete(_) => dw.samples.clone(),
            // bounded odd squash; densities stay those of the raw sample
            ActionSpace::Continuous(_) => dw.samples.iter().map(|a| a.iter().map(|x| x.tanh()).collect()).collect(),
        };
        ep.worker.push(dw);
        let step = env.step(&actions, rng).map_err(env_err)?;
        ep.rewards.external.push(step.rewards);
        ep.rewards.supervisors.push(if three { graph.partition.clone() } else { Vec::new() });
        ep.obs.push(obs);
        ep.graphs.push(graph);
        ep.positions.push(positions);
        ep.actions.push(actions);
        if step.done {
            break;
        }
    }
    Ok(ep)
}

/// Team return of one episode under uniformly random actions.
pub fn random_episode(env: &mut dyn Env, rng: &mut ChaCha8Rng) -> Result<f64, TrainError> {
    let env_err = |source| TrainError::Env { episode: 0, source };
    env.reset(rng).map_err(env_err)?;
    let n = env.num_agents();
    let mut total = 0.0;
    for _ in 0..env.max_steps() {
        let actions: Vec<Vec<f64>> = match env.action_space() {
            ActionSpace::Discrete(k) => (0..n).map(|_| vec![rng.random_range(0..k) as f64]).collect(),
            ActionSpace::Continuous(k) => (0..n).map(|_| (0..k).map(|_| rng.random_range(-1.0..=1.0)).collect()).collect(),
        };
        let step = env.step(&actions, rng).map_err(env_err)?;
        total += step.rewards.iter().sum::<f64>();
        if step.done {
            break;
        }
    }
    Ok(total)
}
