//! Which levels a run has, their roles and their parameters.

use serde::{Deserialize, Serialize};

use crate::hiergraph::{complete_edges, HierGraph, HierarchySpec, HierarchyTracker};
use crate::msgpass::{MpForm, ObsSchema, Role, TrunkSpec};
use crate::nn::{ConvSpec, NnError, ParamStore};
use crate::policy::{ActionSpace, HeadSpec, Level, LevelNet, Schedule};

use super::{stream, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Himppo,
    Ippo,
    GppoFlat,
    GppoStar,
    GppoComplete,
    GppoPath,
    GppoCycle,
}

impl Variant {
    pub fn is_hierarchical(self) -> bool {
        self == Variant::Himppo
    }

    pub fn topology(self) -> Topology {
        match self {
            Variant::GppoStar => Topology::Star,
            Variant::GppoComplete => Topology::Complete,
            Variant::GppoPath => Topology::Path,
            Variant::GppoCycle => Topology::Cycle,
            _ => Topology::Proximity,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Himppo => "himppo",
            Variant::Ippo => "ippo",
            Variant::GppoFlat => "gppo-flat",
            Variant::GppoStar => "gppo-star",
            Variant::GppoComplete => "gppo-complete",
            Variant::GppoPath => "gppo-path",
            Variant::GppoCycle => "gppo-cycle",
        }
    }
}

/// Worker adjacency. Everything but `Proximity` ignores positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Proximity,
    Star,
    Complete,
    Path,
    Cycle,
}

impl Topology {
    /// Directed edges (both directions) of a fixed topology.
    pub fn fixed_edges(self, n: usize) -> Option<Vec<(usize, usize)>> {
        let both = |pairs: Vec<(usize, usize)>| pairs.into_iter().flat_map(|(a, b)| [(a, b), (b, a)]).collect();
        match self {
            Topology::Proximity => None,
            Topology::Complete => Some(complete_edges(n)),
            Topology::Star => Some(both((1..n).map(|i| (0, i)).collect())),
            Topology::Path => Some(both((1..n).map(|i| (i - 1, i)).collect())),
            Topology::Cycle => {
                let mut pairs: Vec<(usize, usize)> = (1..n).map(|i| (i - 1, i)).collect();
                if n > 2 {
                    pairs.push((n - 1, 0));
                }
                Some(both(pairs))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding and goal dimension.
    pub d: usize,
    pub msg_hidden: usize,
    pub conv_channels: usize,
    pub conv_kernel: usize,
    /// Worker message-passing rounds.
    pub rounds: usize,
    /// Sub-manager rounds in a 3-level hierarchy.
    pub sub_rounds: usize,
    /// Defaults to graph convolution for vector observations and the MLP
    /// message for grids.
    pub worker_form: Option<MpForm>,
    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub separate_critic: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d: 64,
            msg_hidden: 64,
            conv_channels: 8,
            conv_kernel: 2,
            rounds: 1,
            sub_rounds: 1,
            worker_form: None,
            actor_hidden: Vec::new(),
            critic_hidden: Vec::new(),
            separate_critic: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.d == 0 || self.msg_hidden == 0 || self.conv_channels == 0 || self.conv_kernel == 0 {
            return Err(TrainError::Config("model sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn trunk(&self, schema: ObsSchema, three_level: bool) -> TrunkSpec {
        let default_form = match schema {
            ObsSchema::Vector { .. } => MpForm::Gcn,
            ObsSchema::Grid { .. } => MpForm::Mlp,
        };
        TrunkSpec {
            d: self.d,
            msg_hidden: self.msg_hidden,
            conv: ConvSpec {
                out_channels: self.conv_channels,
                kernel: self.conv_kernel,
            },
            worker_rounds: self.rounds,
            worker_form: self.worker_form.unwrap_or(default_form),
            sub_rounds: three_level.then_some(self.sub_rounds),
            manager: true,
        }
    }

    pub fn heads(&self) -> HeadSpec {
        HeadSpec {
            actor_hidden: self.actor_hidden.clone(),
            critic_hidden: self.critic_hidden.clone(),
            separate_critic: self.separate_critic,
        }
    }
}

/// One level's network and its own parameter store.
#[derive(Debug, Clone)]
pub struct LevelSlot {
    pub level: Level,
    pub net: LevelNet,
    pub store: ParamStore,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub variant: Variant,
    /// Graph construction; flat variants use a 2-level spec and ignore its
    /// manager.
    pub hierarchy: HierarchySpec,
    pub schedule: Schedule,
    pub schema: ObsSchema,
    pub worker_space: ActionSpace,
    pub goal_dim: usize,
    /// Top level first.
    pub levels: Vec<LevelSlot>,
}

impl Model {
    pub fn new(
        variant: Variant,
        hierarchy: HierarchySpec,
        cfg: &ModelConfig,
        schema: ObsSchema,
        worker_space: ActionSpace,
        seed: u64,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        hierarchy
            .validate()
            .map_err(|e| TrainError::Config(e.to_string()))?;
        let mut rng = stream(seed, 0, 0);
        let three = variant.is_hierarchical() && hierarchy.levels == 3;
        let base = cfg.trunk(schema, three);
        let heads = cfg.heads();
        let goal = ActionSpace::Continuous(cfg.d);
        let roles: Vec<(Level, Role, ActionSpace)> = if !variant.is_hierarchical() {
            vec![(Level::Worker, Role::Flat, worker_space)]
        } else if three {
            vec![
                (Level::Manager, Role::Manager, goal),
                (Level::SubManager, Role::SubManager, goal),
                (Level::Worker, Role::Worker, worker_space),
            ]
        } else {
            vec![
                (Level::Manager, Role::ManagerOfWorkers, goal),
                (Level::Worker, Role::Worker, worker_space),
            ]
        };
        let levels = roles
            .into_iter()
            .map(|(level, role, space)| {
                let mut store = ParamStore::new();
                let name = format!("{level:?}").to_lowercase();
                let net = LevelNet::new(&mut store, &name, schema, base, role, space, &heads, &mut rng)?;
                Ok(LevelSlot { level, net, store })
            })
            .collect::<Result<Vec<_>, NnError>>()?;
        let hierarchy = if variant.is_hierarchical() {
            hierarchy
        } else {
            HierarchySpec::two_level(1)
        };
        let schedule = Schedule {
            levels: if variant.is_hierarchical() { hierarchy.levels } else { 1 },
            alpha: hierarchy.alpha,
            k: hierarchy.k,
        };
        Ok(Self {
            variant,
            hierarchy,
            schedule,
            schema,
            worker_space,
            goal_dim: cfg.d,
            levels,
        })
    }

    pub fn slot(&self, level: Level) -> Option<&LevelSlot> {
        self.levels.iter().find(|s| s.level == level)
    }

    pub fn three_level(&self) -> bool {
        self.variant.is_hierarchical() && self.hierarchy.levels == 3
    }

    /// Period of the top level's goals, or `None` for flat variants.
    pub fn manager_period(&self) -> Option<usize> {
        self.variant.is_hierarchical().then(|| self.hierarchy.manager_period())
    }

    /// The step's graph with the variant's fixed topology applied.
    pub fn graph(&self, tracker: &mut HierarchyTracker, positions: &[[f64; 2]]) -> HierGraph {
        let mut g = tracker.build(positions);
        if let Some(edges) = self.variant.topology().fixed_edges(positions.len()) {
            g.worker_edges = edges;
        }
        g
    }

    pub fn num_params(&self) -> usize {
        self.levels.iter().map(|s| s.store.num_scalars()).sum()
    }
}
