//! Bundled tabular systems.

use super::tabular::TabularFeudalMdp;

/// Dynamics and rewards of one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalMdp {
    pub init: Vec<f64>,
    /// `[x][a][x']`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[x][a]`
    pub reward: Vec<Vec<f64>>,
}

impl LocalMdp {
    /// Two states, two actions, stochastic.
    pub fn toggle() -> Self {
        Self {
            init: vec![0.6, 0.4],
            transition: vec![vec![vec![0.8, 0.2], vec![0.3, 0.7]], vec![vec![0.5, 0.5], vec![0.1, 0.9]]],
            reward: vec![vec![0.0, 0.5], vec![1.0, 0.2]],
        }
    }

    /// Two states, two actions, the action picks the next state.
    pub fn switch() -> Self {
        Self {
            init: vec![1.0, 0.0],
            transition: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2],
            reward: vec![vec![0.3, 0.0], vec![1.0, 0.6]],
        }
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        for row in &mut self.reward {
            row.iter_mut().for_each(|r| *r *= factor);
        }
        self
    }
}

pub struct Layout<'a> {
    pub name: &'a str,
    pub partition: Vec<usize>,
    pub goals: (usize, usize),
    pub horizon: usize,
    pub alpha: usize,
    pub k: usize,
    pub gamma: f64,
}

impl TabularFeudalMdp {
    pub fn from_locals(layout: Layout<'_>, locals: &[LocalMdp]) -> Self {
        assert_eq!(locals.len(), layout.partition.len());
        Self {
            name: layout.name.to_string(),
            num_states: locals[0].init.len(),
            num_actions: locals[0].reward[0].len(),
            num_subs: layout.partition.iter().max().map_or(0, |m| m + 1),
            partition: layout.partition,
            init: locals.iter().map(|l| l.init.clone()).collect(),
            transition: locals.iter().map(|l| l.transition.clone()).collect(),
            reward: locals.iter().map(|l| l.reward.clone()).collect(),
            manager_goals: layout.goals.0,
            sub_goals: layout.goals.1,
            horizon: layout.horizon,
            alpha: layout.alpha,
            k: layout.k,
            gamma: layout.gamma,
            gamma_s: layout.gamma,
            gamma_w: layout.gamma,
        }
    }

    pub fn homogeneous(layout: Layout<'_>, local: LocalMdp) -> Self {
        let n = layout.partition.len();
        Self::from_locals(layout, &vec![local; n])
    }
}

fn toy(name: &str, partition: Vec<usize>) -> TabularFeudalMdp {
    TabularFeudalMdp::homogeneous(
        Layout {
            name,
            partition,
            goals: (2, 2),
            horizon: 4,
            alpha: 1,
            k: 2,
            gamma: 0.95,
        },
        LocalMdp::toggle(),
    )
}

/// Homogeneous systems with up to 2 sub-managers of 2 workers each, H = 4,
/// K alpha = 2.
pub fn bundled() -> Vec<TabularFeudalMdp> {
    vec![
        toy("1x1", vec![0]),
        toy("1x2", vec![0, 0]),
        toy("2x1", vec![0, 1]),
        toy("2x2", vec![0, 0, 1, 1]),
    ]
}

/// Small systems for the lower-level identities, with one sub-manager
/// interval per step and manager period `k`.
pub fn lower_level_toys(gamma: f64, k: usize) -> Vec<TabularFeudalMdp> {
    let layout = |name, partition, horizon| Layout {
        name,
        partition,
        goals: (2, 2),
        horizon,
        alpha: 1,
        k,
        gamma,
    };
    vec![
        TabularFeudalMdp::homogeneous(layout("1x1", vec![0], 4usize.div_ceil(k) * k), LocalMdp::toggle()),
        TabularFeudalMdp::homogeneous(layout("2x1", vec![0, 1], if k == 1 { 2 } else { k }), LocalMdp::switch()),
    ]
}

/// Workers with different rewards in cells of different sizes.
pub fn counterexample() -> TabularFeudalMdp {
    TabularFeudalMdp::from_locals(
        Layout {
            name: "heterogeneous",
            partition: vec![0, 1, 1],
            goals: (2, 2),
            horizon: 4,
            alpha: 1,
            k: 2,
            gamma: 0.95,
        },
        &[LocalMdp::toggle().scaled(3.0), LocalMdp::toggle(), LocalMdp::toggle()],
    )
}
