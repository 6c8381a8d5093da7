//! Stateless multi-armed bandit with one arm choice per agent per step.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_count, discrete, Env, EnvError, Step};
use crate::hiergraph::CommRange;
use crate::msgpass::{ObsSchema, RawObs};
use crate::policy::ActionSpace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BanditConfig {
    pub agents: usize,
    pub arms: usize,
    pub horizon: usize,
}

/// Arm `a` pays `a / (arms - 1)`, so the last arm is best.
#[derive(Debug, Clone)]
pub struct Bandit {
    cfg: BanditConfig,
    t: usize,
}

impl Bandit {
    pub fn new(cfg: BanditConfig) -> Result<Self, EnvError> {
        if cfg.agents == 0 || cfg.arms < 2 || cfg.horizon == 0 {
            return Err(EnvError::Config("bandit needs agents, at least 2 arms and a horizon".into()));
        }
        Ok(Self { cfg, t: 0 })
    }

    pub fn payout(&self, arm: usize) -> f64 {
        arm as f64 / (self.cfg.arms - 1) as f64
    }
}

impl Env for Bandit {
    fn num_agents(&self) -> usize {
        self.cfg.agents
    }

    fn obs_schema(&self) -> ObsSchema {
        ObsSchema::Vector { len: 2 }
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(self.cfg.arms)
    }

    fn comm_range(&self) -> CommRange {
        CommRange::Euclidean(0.5)
    }

    fn max_steps(&self) -> usize {
        self.cfg.horizon
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Result<(), EnvError> {
        self.t = 0;
        Ok(())
    }

    fn observe(&self) -> Vec<RawObs> {
        let phase = self.t as f64 / self.cfg.horizon as f64;
        vec![
            RawObs {
                grid: Vec::new(),
                vector: vec![1.0, phase],
            };
            self.cfg.agents
        ]
    }

    fn positions(&self) -> Vec<[f64; 2]> {
        (0..self.cfg.agents).map(|i| [-0.9 + 0.3 * i as f64, -0.5]).collect()
    }

    fn step(&mut self, actions: &[Vec<f64>], _rng: &mut ChaCha8Rng) -> Result<Step, EnvError> {
        check_count(actions, self.cfg.agents)?;
        let rewards = actions
            .iter()
            .enumerate()
            .map(|(i, a)| discrete(i, a, self.cfg.arms).map(|arm| self.payout(arm)))
            .collect::<Result<_, _>>()?;
        self.t += 1;
        Ok(Step {
            rewards,
            done: self.t >= self.cfg.horizon,
        })
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    #[test]
    fn last_arm_pays_most() {
        let mut b = Bandit::new(BanditConfig { agents: 2, arms: 3, horizon: 2 }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        b.reset(&mut rng).unwrap();
        let s = b.step(&[vec![2.0], vec![0.0]], &mut rng).unwrap();
        assert_eq!(s.rewards, vec![1.0, 0.0]);
        assert!(!s.done);
        assert!(b.step(&[vec![1.0], vec![1.0]], &mut rng).unwrap().done);
        assert!(b.step(&[vec![3.0], vec![1.0]], &mut rng).is_err());
    }
}
