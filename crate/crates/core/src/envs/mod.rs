//! Environments: level-based foraging with survival on a grid, first-visit
//! sampling in a continuous arena, and a tiny bandit used by tests.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hiergraph::CommRange;
use crate::msgpass::{ObsSchema, RawObs};
use crate::policy::ActionSpace;

mod bandit;
mod lbfws;
mod replay;
mod sampling;

pub use bandit::{Bandit, BanditConfig};
pub use lbfws::{Food, Lbfws, LbfwsAction, LbfwsConfig, LbfwsPreset};
pub use replay::{ReplayRecord, ReplayWriter};
pub use sampling::{Sampling, SamplingConfig};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EnvError {
    #[error("agent {agent}: invalid action {action:?}")]
    BadAction { agent: usize, action: Vec<f64> },
    #[error("expected {expected} actions, got {found}")]
    ActionCount { expected: usize, found: usize },
    #[error("could not place {what} after {tries} tries")]
    Placement { what: &'static str, tries: usize },
    #[error("invalid environment config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub rewards: Vec<f64>,
    pub done: bool,
}

pub trait Env {
    fn num_agents(&self) -> usize;
    fn obs_schema(&self) -> ObsSchema;
    fn action_space(&self) -> ActionSpace;
    fn comm_range(&self) -> CommRange;
    /// Upper bound on the episode length.
    fn max_steps(&self) -> usize;
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Result<(), EnvError>;
    fn observe(&self) -> Vec<RawObs>;
    /// Agent positions in the metric of `comm_range`, centred so that the
    /// quadrant of a position is meaningful.
    fn positions(&self) -> Vec<[f64; 2]>;
    /// Discrete actions are encoded as `[index]`.
    fn step(&mut self, actions: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<Step, EnvError>;
}

/// Environment section of a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Lbfws(LbfwsConfig),
    Sampling(SamplingConfig),
    Bandit(BanditConfig),
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Env>, EnvError> {
        Ok(match self {
            EnvSpec::Lbfws(c) => Box::new(Lbfws::new(c.clone())?),
            EnvSpec::Sampling(c) => Box::new(Sampling::new(c.clone())?),
            EnvSpec::Bandit(c) => Box::new(Bandit::new(c.clone())?),
        })
    }
}

pub(crate) fn check_count(actions: &[Vec<f64>], expected: usize) -> Result<(), EnvError> {
    if actions.len() != expected {
        return Err(EnvError::ActionCount {
            expected,
            found: actions.len(),
        });
    }
    Ok(())
}

/// Reads a discrete action encoded as `[index]`.
pub(crate) fn discrete(agent: usize, action: &[f64], n: usize) -> Result<usize, EnvError> {
    match action {
        [a] if a.fract() == 0.0 && *a >= 0.0 && (*a as usize) < n => Ok(*a as usize),
        _ => Err(EnvError::BadAction {
            agent,
            action: action.to_vec(),
        }),
    }
}
