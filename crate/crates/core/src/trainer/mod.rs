//! PPO training of every level of the hierarchy at once: rollouts, reward
//! assignment, per-level GAE and clipped-surrogate updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::envs::EnvError;
use crate::msgpass::MsgPassError;
use crate::nn::NnError;
use crate::policy::{Level, PolicyError, SigmaSchedule};
use crate::rewards::RewardError;

mod assign;
mod model;
mod ppo;
mod rollout;
mod run;

pub use assign::{assign, reward_streams, RewardLayout, RewardScheme, Sample, Streams};
pub use model::{LevelSlot, Model, ModelConfig, Topology, Variant};
pub use ppo::{check_level_gradients, normalize_advantages, ppo_loss, ppo_update, LevelStats, LossTerms, PpoRow};
pub use rollout::{random_episode, run_episode, Decisions, Episode};
pub use run::{random_baseline, EpisodeLog, EvalLog, LogEvent, RunSummary, Trainer};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("episode {episode}: {source}")]
    Env { episode: usize, source: EnvError },
    #[error("non-finite loss at level {level:?}, minibatch {minibatch}")]
    NonFiniteLoss { level: Level, minibatch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    MsgPass(#[from] MsgPassError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub gamma: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch: usize,
    pub episodes_per_update: usize,
    /// GAE lambda of the manager and sub-managers.
    pub lambda_upper: f64,
    pub lambda_worker: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Gradients are clamped elementwise into `[-grad_clip, grad_clip]`.
    pub grad_clip: f64,
    /// Environment steps collected for training before stopping.
    pub total_steps: u64,
    /// Updates between two greedy evaluations; 0 disables them.
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub sigma: SigmaSchedule,
    /// Worker threads for rollouts; 0 picks the machine's parallelism.
    /// Results do not depend on it.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            clip: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 30,
            minibatch: 128,
            episodes_per_update: 40,
            lambda_upper: 0.0,
            lambda_worker: 0.95,
            actor_lr: 1e-4,
            critic_lr: 5e-4,
            grad_clip: 1.0,
            total_steps: 200_000,
            eval_every: 1,
            eval_episodes: 10,
            sigma: SigmaSchedule::default(),
            threads: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what: &str| Err(TrainError::Config(what.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip must lie in (0, 1)");
        }
        if self.epochs == 0 || self.minibatch == 0 || self.episodes_per_update == 0 {
            return bad("epochs, minibatch and episodes_per_update must be positive");
        }
        for (name, l) in [("lambda_upper", self.lambda_upper), ("lambda_worker", self.lambda_worker)] {
            if !(0.0..=1.0).contains(&l) {
                return Err(TrainError::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("loss coefficients must be non-negative");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.grad_clip > 0.0) {
            return bad("learning rates and the gradient clip must be positive");
        }
        let s = self.sigma;
        if !(s.floor > 0.0 && s.init >= s.floor && s.every > 0.0 && s.decay >= 0.0) {
            return bad("sigma schedule needs init >= floor > 0 and a positive interval");
        }
        Ok(())
    }

    pub(crate) fn thread_count(&self) -> usize {
        if self.threads > 0 {
            self.threads
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

/// Independent random stream for one purpose of one run.
pub(crate) fn stream(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((purpose << 48) ^ index);
    rng
}

/// Maps `f` over `0..n` on up to `threads` threads, keeping the order.
pub(crate) fn par_map<T, F>(n: usize, threads: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let threads = threads.min(n);
    if threads <= 1 {
        return (0..n).map(f).collect();
    }
    let f = &f;
    let mut parts: Vec<Vec<(usize, T)>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads)
            .map(|k| s.spawn(move || (k..n).step_by(threads).map(|i| (i, f(i))).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("rollout thread panicked")).collect()
    });
    let mut out: Vec<(usize, T)> = parts.iter_mut().flat_map(std::mem::take).collect();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, v)| v).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn par_map_keeps_order() {
        let seq: Vec<usize> = par_map(17, 1, |i| i * i);
        let par: Vec<usize> = par_map(17, 4, |i| i * i);
        assert_eq!(seq, par);
    }

    #[test]
    fn defaults_validate_and_bad_clip_fails() {
        TrainConfig::default().validate().unwrap();
        let cfg = TrainConfig {
            clip: 1.5,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(TrainError::Config(_))));
    }
}
