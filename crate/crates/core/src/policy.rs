//! Level policies and critics: Gaussian goal policies, categorical or
//! Gaussian worker policies, the emission schedule and the std schedule.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::msgpass::{assemble_inputs, GraphBatch, MsgPassError, ObsSchema, Role, Trunk, TrunkSpec};
use crate::nn::{Group, Mat, Mlp, NetSpec, NnError, ParamStore, Tape, Var};

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("{level:?} is not scheduled to act at step {t}")]
    NotScheduled { level: Level, t: usize },
    #[error(transparent)]
    MsgPass(#[from] MsgPassError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Level {
    Manager,
    SubManager,
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Real vector of the given dimension (goals and velocities).
    Continuous(usize),
}

impl ActionSpace {
    pub fn head_dim(self) -> usize {
        match self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }

    pub fn sample_dim(self) -> usize {
        match self {
            ActionSpace::Discrete(_) => 1,
            ActionSpace::Continuous(n) => n,
        }
    }

    /// Draws from the distribution parameterised by `head` (logits or mean).
    /// A zero std returns the mean.
    pub fn sample(self, head: &[f64], sigma: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            ActionSpace::Discrete(_) => {
                let p = softmax(head);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                vec![pick as f64]
            }
            ActionSpace::Continuous(_) => head
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(rng);
                    mu + sigma * z
                })
                .collect(),
        }
    }

    pub fn greedy(self, head: &[f64]) -> Vec<f64> {
        match self {
            ActionSpace::Discrete(_) => {
                let mut best = 0;
                for (i, v) in head.iter().enumerate() {
                    if *v > head[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
            ActionSpace::Continuous(_) => head.to_vec(),
        }
    }

    pub fn log_prob(self, head: &[f64], sigma: f64, sample: &[f64]) -> f64 {
        match self {
            ActionSpace::Discrete(_) => {
                let a = sample[0] as usize;
                head[a] - log_sum_exp(head)
            }
            ActionSpace::Continuous(_) => head
                .iter()
                .zip(sample)
                .map(|(mu, x)| {
                    let z = (x - mu) / sigma;
                    -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * PI).ln()
                })
                .sum(),
        }
    }

    pub fn entropy(self, head: &[f64], sigma: f64) -> f64 {
        match self {
            ActionSpace::Discrete(_) => {
                let lse = log_sum_exp(head);
                head.iter()
                    .map(|z| {
                        let lp = z - lse;
                        let p = lp.exp();
                        if p > 0.0 {
                            -p * lp
                        } else {
                            0.0
                        }
                    })
                    .sum()
            }
            ActionSpace::Continuous(n) => n as f64 * (0.5 + 0.5 * (2.0 * PI * sigma * sigma).ln()),
        }
    }

    /// Gradient of `log_prob` with respect to the head.
    pub fn grad_log_prob(self, head: &[f64], sigma: f64, sample: &[f64]) -> Vec<f64> {
        match self {
            ActionSpace::Discrete(_) => {
                let a = sample[0] as usize;
                let mut g: Vec<f64> = softmax(head).into_iter().map(|p| -p).collect();
                g[a] += 1.0;
                g
            }
            ActionSpace::Continuous(_) => head.iter().zip(sample).map(|(mu, x)| (x - mu) / (sigma * sigma)).collect(),
        }
    }

    /// Gradient of `entropy` with respect to the head (zero for a Gaussian
    /// with a fixed std).
    pub fn grad_entropy(self, head: &[f64]) -> Vec<f64> {
        match self {
            ActionSpace::Discrete(_) => {
                let lse = log_sum_exp(head);
                let lp: Vec<f64> = head.iter().map(|z| z - lse).collect();
                let h: f64 = lp.iter().map(|l| -l.exp() * l).sum();
                lp.iter().map(|l| -l.exp() * (l + h)).collect()
            }
            ActionSpace::Continuous(n) => vec![0.0; n],
        }
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(z);
    z.iter().map(|v| (v - lse).exp()).collect()
}

/// Std of the goal and continuous-action distributions as a function of the
/// global step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SigmaSchedule {
    pub init: f64,
    pub decay: f64,
    pub every: f64,
    pub floor: f64,
}

impl Default for SigmaSchedule {
    fn default() -> Self {
        Self {
            init: 0.5,
            decay: 0.05,
            every: 2.5e5,
            floor: 0.1,
        }
    }
}

impl SigmaSchedule {
    pub fn at(&self, step: u64) -> f64 {
        let k = (step as f64 / self.every).floor();
        (self.init - self.decay * k).max(self.floor)
    }

    /// Shrinks the decay interval by `factor` for reduced step budgets.
    pub fn scaled(self, factor: f64) -> Self {
        Self {
            every: self.every * factor,
            ..self
        }
    }
}

/// Emission predicates of the hierarchy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub levels: u8,
    pub alpha: usize,
    pub k: usize,
}

impl Schedule {
    pub fn manager_period(&self) -> usize {
        if self.levels == 2 {
            self.alpha
        } else {
            self.k * self.alpha
        }
    }

    pub fn emits(&self, level: Level, t: usize) -> bool {
        match level {
            Level::Manager => t % self.manager_period() == 0,
            Level::SubManager => self.levels == 3 && t % self.alpha == 0,
            Level::Worker => true,
        }
    }

    pub fn check(&self, level: Level, t: usize) -> Result<(), PolicyError> {
        if self.emits(level, t) {
            Ok(())
        } else {
            Err(PolicyError::NotScheduled { level, t })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    /// Critic gets its own trunk instead of sharing the actor's.
    pub separate_critic: bool,
}

impl HeadSpec {
    pub fn linear() -> Self {
        Self {
            actor_hidden: Vec::new(),
            critic_hidden: Vec::new(),
            separate_critic: false,
        }
    }
}

/// Trunk plus actor and critic heads for one level.
#[derive(Debug, Clone)]
pub struct LevelNet {
    pub role: Role,
    pub space: ActionSpace,
    actor_trunk: Trunk,
    critic_trunk: Option<Trunk>,
    actor_head: Mlp,
    critic_head: Mlp,
}

/// One sampled decision for one row.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub sample: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
}

impl LevelNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        schema: ObsSchema,
        base: TrunkSpec,
        role: Role,
        space: ActionSpace,
        heads: &HeadSpec,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self, NnError> {
        let spec = role.trunk_spec(base);
        let input = role.input_dim(spec.d, spec.worker_rounds);
        let actor_trunk = Trunk::new(store, &format!("{name}.trunk"), schema, spec, Group::Actor, rng)?;
        let critic_trunk = if heads.separate_critic {
            Some(Trunk::new(store, &format!("{name}.ctrunk"), schema, spec, Group::Critic, rng)?)
        } else {
            None
        };
        let sizes = |hidden: &[usize], out: usize| {
            let mut s = vec![input];
            s.extend_from_slice(hidden);
            s.push(out);
            NetSpec::mlp(&s)
        };
        let actor_head = Mlp::new(store, &format!("{name}.actor"), &sizes(&heads.actor_hidden, space.head_dim()), Group::Actor, rng)?;
        let critic_head = Mlp::new(store, &format!("{name}.critic"), &sizes(&heads.critic_hidden, 1), Group::Critic, rng)?;
        Ok(Self {
            role,
            space,
            actor_trunk,
            critic_trunk,
            actor_head,
            critic_head,
        })
    }

    /// Head outputs (`rows x head_dim`) and values (`rows x 1`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &GraphBatch,
        rows: &[usize],
        goals: Option<&Mat>,
    ) -> Result<(Var, Var), PolicyError> {
        let out = self.actor_trunk.forward(tape, store, batch)?;
        let x = assemble_inputs(tape, self.role, &out, batch, rows, goals)?;
        let head = self.actor_head.forward(tape, store, x)?;
        let xc = match &self.critic_trunk {
            Some(t) => {
                let oc = t.forward(tape, store, batch)?;
                assemble_inputs(tape, self.role, &oc, batch, rows, goals)?
            }
            None => x,
        };
        let value = self.critic_head.forward(tape, store, xc)?;
        Ok((head, value))
    }

    /// Samples (or, when `greedy`, takes the mode for) every selected row.
    #[allow(clippy::too_many_arguments)]
    pub fn act(
        &self,
        store: &ParamStore,
        schedule: &Schedule,
        level: Level,
        t: usize,
        batch: &GraphBatch,
        rows: &[usize],
        goals: Option<&Mat>,
        sigma: f64,
        greedy: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<Decision>, PolicyError> {
        schedule.check(level, t)?;
        let mut tape = Tape::new();
        let (head, value) = self.forward(&mut tape, store, batch, rows, goals)?;
        let (hm, vm) = (tape.value(head), tape.value(value));
        Ok((0..rows.len())
            .map(|r| {
                let h = hm.row(r);
                let sample = if greedy { self.space.greedy(h) } else { self.space.sample(h, sigma, rng) };
                let log_prob = if sigma > 0.0 || matches!(self.space, ActionSpace::Discrete(_)) {
                    self.space.log_prob(h, sigma, &sample)
                } else {
                    0.0
                };
                Decision {
                    sample,
                    log_prob,
                    value: vm.get(r, 0),
                }
            })
            .collect())
    }
}
