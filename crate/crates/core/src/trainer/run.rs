//! The train loop: alternate collection and update phases until the step
//! budget is spent, with periodic greedy evaluations.

use std::collections::BTreeMap;

use crate::envs::EnvSpec;
use crate::hiergraph::HierarchySpec;
use crate::policy::Level;

use super::{assign, par_map, ppo_update, random_episode, run_episode, stream, Episode, LevelStats, Model, ModelConfig, RewardScheme, Sample, Streams, TrainConfig, TrainError, Variant};

const COLLECT: u64 = 1;
const EVAL: u64 = 2;
const UPDATE: u64 = 3;
const RANDOM: u64 = 4;

/// One training episode as it goes to the log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeLog {
    pub episode: usize,
    pub update: usize,
    pub global_step: u64,
    pub steps: usize,
    pub agent_returns: Vec<f64>,
    /// Mean assigned reward of manager, sub-managers and workers.
    pub level_rewards: [Option<f64>; 3],
    /// Mean loss of the update that consumed the episode.
    pub level_losses: [Option<f64>; 3],
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalLog {
    pub index: usize,
    pub update: usize,
    pub global_step: u64,
    pub episodes: usize,
    /// Team return statistics over the evaluation episodes.
    pub mean_return: f64,
    pub std_return: f64,
    pub agent_returns: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum LogEvent<'a> {
    Episode(&'a EpisodeLog),
    Evaluation(&'a EvalLog),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunSummary {
    pub updates: usize,
    pub global_step: u64,
    pub episodes: usize,
    pub evaluations: Vec<EvalLog>,
}

impl RunSummary {
    /// Mean of the last `n` evaluation means.
    pub fn final_mean(&self, n: usize) -> Option<f64> {
        let tail = &self.evaluations[self.evaluations.len().saturating_sub(n)..];
        (!tail.is_empty()).then(|| tail.iter().map(|e| e.mean_return).sum::<f64>() / tail.len() as f64)
    }
}

fn level_index(level: Level) -> usize {
    match level {
        Level::Manager => 0,
        Level::SubManager => 1,
        Level::Worker => 2,
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn with_episode(e: TrainError, episode: usize) -> TrainError {
    match e {
        TrainError::Env { source, .. } => TrainError::Env { episode, source },
        other => other,
    }
}

/// Mean team return of uniformly random actions.
pub fn random_baseline(env: &EnvSpec, episodes: usize, seed: u64) -> Result<f64, TrainError> {
    let returns = (0..episodes)
        .map(|i| {
            let mut e = env.build().map_err(|source| TrainError::Env { episode: i, source })?;
            random_episode(e.as_mut(), &mut stream(seed, RANDOM, i as u64)).map_err(|err| with_episode(err, i))
        })
        .collect::<Result<Vec<f64>, _>>()?;
    Ok(mean_std(&returns).0)
}

#[derive(Debug, Clone)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub env: EnvSpec,
    pub model: Model,
    pub scheme: RewardScheme,
    pub seed: u64,
    pub global_step: u64,
    pub updates: usize,
    pub episodes: usize,
    pub evaluations: usize,
}

impl Trainer {
    pub fn new(
        env: EnvSpec,
        variant: Variant,
        hierarchy: HierarchySpec,
        model_cfg: &ModelConfig,
        scheme: RewardScheme,
        cfg: TrainConfig,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let probe = env.build().map_err(|source| TrainError::Env { episode: 0, source })?;
        let model = Model::new(variant, hierarchy, model_cfg, probe.obs_schema(), probe.action_space(), seed)?;
        Ok(Self {
            cfg,
            env,
            model,
            scheme,
            seed,
            global_step: 0,
            updates: 0,
            episodes: 0,
            evaluations: 0,
        })
    }

    pub fn sigma(&self) -> f64 {
        self.cfg.sigma.at(self.global_step)
    }

    /// Plays `n` episodes with the current parameters. Episode `i` of the
    /// run always uses the same random stream.
    pub fn collect(&self, n: usize) -> Result<Vec<Episode>, TrainError> {
        let sigma = self.sigma();
        let first = self.episodes;
        par_map(n, self.cfg.thread_count(), |i| {
            let id = first + i;
            let mut env = self.env.build().map_err(|source| TrainError::Env { episode: id, source })?;
            run_episode(&self.model, env.as_mut(), sigma, false, &mut stream(self.seed, COLLECT, id as u64)).map_err(|e| with_episode(e, id))
        })
        .into_iter()
        .collect()
    }

    /// Reward streams of every episode and the training rows of every level.
    pub fn samples(&self, episodes: &[Episode]) -> Result<(Vec<Streams>, BTreeMap<Level, Vec<Sample>>), TrainError> {
        let mut streams = Vec::with_capacity(episodes.len());
        let mut samples: BTreeMap<Level, Vec<Sample>> = BTreeMap::new();
        for (i, ep) in episodes.iter().enumerate() {
            let (s, per_level) = assign(ep, i, &self.model, self.scheme, &self.cfg)?;
            streams.push(s);
            for (level, rows) in per_level {
                samples.entry(level).or_default().extend(rows);
            }
        }
        Ok((streams, samples))
    }

    /// One PPO phase for every level. Levels are independent and run
    /// concurrently, each with its own random stream.
    pub fn update_levels(&mut self, episodes: &[Episode], samples: &BTreeMap<Level, Vec<Sample>>) -> Result<BTreeMap<Level, LevelStats>, TrainError> {
        let schema = self.model.schema;
        let cfg = &self.cfg;
        let (seed, update) = (self.seed, self.updates as u64);
        let results: Vec<Result<(Level, LevelStats), TrainError>> = std::thread::scope(|s| {
            let handles: Vec<_> = self
                .model
                .levels
                .iter_mut()
                .map(|slot| {
                    s.spawn(move || {
                        let mut rng = stream(seed, UPDATE, update * 4 + level_index(slot.level) as u64);
                        let rows = samples.get(&slot.level).map_or(&[][..], Vec::as_slice);
                        ppo_update(slot, schema, episodes, rows, cfg, &mut rng).map(|st| (slot.level, st))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("update thread panicked")).collect()
        });
        let stats = results.into_iter().collect::<Result<BTreeMap<_, _>, _>>()?;
        self.updates += 1;
        Ok(stats)
    }

    /// Assigns rewards and updates every level on `episodes`.
    pub fn update(&mut self, episodes: &[Episode]) -> Result<(Vec<Streams>, BTreeMap<Level, LevelStats>), TrainError> {
        let (streams, samples) = self.samples(episodes)?;
        let stats = self.update_levels(episodes, &samples)?;
        Ok((streams, stats))
    }

    /// Greedy evaluation over `n` episodes.
    pub fn evaluate(&self, n: usize, index: usize) -> Result<EvalLog, TrainError> {
        let eps: Vec<Episode> = par_map(n, self.cfg.thread_count(), |i| {
            let mut env = self.env.build().map_err(|source| TrainError::Env { episode: i, source })?;
            run_episode(&self.model, env.as_mut(), 0.0, true, &mut stream(self.seed, EVAL, (index * n + i) as u64)).map_err(|e| with_episode(e, i))
        })
        .into_iter()
        .collect::<Result<_, _>>()?;
        let returns: Vec<f64> = eps.iter().map(Episode::team_return).collect();
        let (mean_return, std_return) = mean_std(&returns);
        let agents = eps.first().map_or(0, |e| e.rewards.num_workers);
        let agent_returns = (0..agents)
            .map(|a| eps.iter().map(|e| e.agent_returns()[a]).sum::<f64>() / n as f64)
            .collect();
        Ok(EvalLog {
            index,
            update: self.updates,
            global_step: self.global_step,
            episodes: n,
            mean_return,
            std_return,
            agent_returns,
        })
    }

    /// Trains until the step budget is spent, reporting every episode and
    /// evaluation to `on_log`.
    pub fn run<E: From<TrainError>>(&mut self, mut on_log: impl FnMut(LogEvent<'_>) -> Result<(), E>) -> Result<RunSummary, E> {
        let mut summary = RunSummary::default();
        while self.global_step < self.cfg.total_steps {
            let sigma = self.sigma();
            let episodes = self.collect(self.cfg.episodes_per_update)?;
            let (streams, stats) = self.update(&episodes)?;
            let mut losses = [None; 3];
            for (level, st) in &stats {
                losses[level_index(*level)] = Some(st.loss);
            }
            for (ep, s) in episodes.iter().zip(&streams) {
                self.global_step += ep.len() as u64;
                let log = EpisodeLog {
                    episode: self.episodes,
                    update: self.updates,
                    global_step: self.global_step,
                    steps: ep.len(),
                    agent_returns: ep.agent_returns(),
                    level_rewards: s.means(),
                    level_losses: losses,
                    sigma,
                };
                self.episodes += 1;
                on_log(LogEvent::Episode(&log))?;
            }
            if self.cfg.eval_every > 0 && self.updates % self.cfg.eval_every == 0 {
                let ev = self.evaluate(self.cfg.eval_episodes, self.evaluations)?;
                self.evaluations += 1;
                on_log(LogEvent::Evaluation(&ev))?;
                summary.evaluations.push(ev);
            }
        }
        summary.updates = self.updates;
        summary.global_step = self.global_step;
        summary.episodes = self.episodes;
        Ok(summary)
    }
}
