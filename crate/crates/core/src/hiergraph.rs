//! Per-step feudal structure: worker proximity graph, worker to sub-manager
//! partition, sub-manager clique and the single manager.

use serde::{Deserialize, Serialize};

/// Sub-managers in the quadrant layout.
pub const QUADRANTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Assignment {
    Quadrant,
    SingleManager,
}

/// Distance predicate for worker edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommRange {
    /// Euclidean radius in a continuous arena.
    Euclidean(f64),
    /// Chebyshev radius on a grid (the agents' sight).
    Chebyshev(f64),
}

impl CommRange {
    pub fn connects(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let (dx, dy) = ((a[0] - b[0]).abs(), (a[1] - b[1]).abs());
        match *self {
            CommRange::Euclidean(r) => dx.hypot(dy) <= r,
            CommRange::Chebyshev(r) => dx.max(dy) <= r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HierarchySpec {
    pub levels: u8,
    pub alpha: usize,
    pub k: usize,
    pub assignment: Assignment,
    pub dynamic: bool,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HierarchyError {
    #[error("hierarchy must have 2 or 3 levels, got {0}")]
    Levels(u8),
    #[error("alpha and K must be at least 1 (alpha = {alpha}, K = {k})")]
    TimeScale { alpha: usize, k: usize },
    #[error("a {levels}-level hierarchy cannot use the {assignment:?} assignment")]
    Assignment { levels: u8, assignment: Assignment },
}

impl HierarchySpec {
    pub fn two_level(alpha: usize) -> Self {
        Self {
            levels: 2,
            alpha,
            k: 1,
            assignment: Assignment::SingleManager,
            dynamic: false,
        }
    }

    pub fn three_level(alpha: usize, k: usize, dynamic: bool) -> Self {
        Self {
            levels: 3,
            alpha,
            k,
            assignment: Assignment::Quadrant,
            dynamic,
        }
    }

    pub fn validate(&self) -> Result<(), HierarchyError> {
        if !(2..=3).contains(&self.levels) {
            return Err(HierarchyError::Levels(self.levels));
        }
        if self.alpha == 0 || self.k == 0 {
            return Err(HierarchyError::TimeScale {
                alpha: self.alpha,
                k: self.k,
            });
        }
        let ok = matches!(
            (self.levels, self.assignment),
            (2, Assignment::SingleManager) | (3, Assignment::Quadrant)
        );
        if !ok {
            return Err(HierarchyError::Assignment {
                levels: self.levels,
                assignment: self.assignment,
            });
        }
        Ok(())
    }

    /// Steps between two manager goals. In a 2-level hierarchy the manager
    /// talks to workers directly every `alpha` steps.
    pub fn manager_period(&self) -> usize {
        if self.levels == 2 {
            self.alpha
        } else {
            self.k * self.alpha
        }
    }

    pub fn num_submanagers(&self) -> usize {
        if self.levels == 3 {
            QUADRANTS
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HierGraph {
    pub num_workers: usize,
    /// Directed edge list `(src, dst)`, both directions present, sorted.
    pub worker_edges: Vec<(usize, usize)>,
    /// Sub-manager of each worker; empty for a 2-level hierarchy.
    pub partition: Vec<usize>,
    pub num_submanagers: usize,
}

impl HierGraph {
    pub fn supervisor(&self, w: usize) -> Option<usize> {
        self.partition.get(w).copied()
    }

    /// Workers of each sub-manager, in increasing id order.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.num_submanagers];
        for (w, &s) in self.partition.iter().enumerate() {
            cells[s].push(w);
        }
        cells
    }

    pub fn neighbors(&self, w: usize) -> Vec<usize> {
        self.worker_edges.iter().filter(|e| e.1 == w).map(|e| e.0).collect()
    }

    pub fn degree(&self, w: usize) -> usize {
        self.worker_edges.iter().filter(|e| e.1 == w).count()
    }

    /// Directed edges of the complete sub-manager graph.
    pub fn submanager_edges(&self) -> Vec<(usize, usize)> {
        complete_edges(self.num_submanagers)
    }

    pub fn tag(&self, s: usize) -> Vec<f64> {
        one_hot(s, self.num_submanagers)
    }
}

pub fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub fn complete_edges(n: usize) -> Vec<(usize, usize)> {
    let mut e = Vec::with_capacity(n * n.saturating_sub(1));
    for i in 0..n {
        for j in 0..n {
            if i != j {
                e.push((i, j));
            }
        }
    }
    e
}

/// Edge `(i, j)` iff `i != j` and the two agents are within range.
pub fn build_worker_graph(positions: &[[f64; 2]], range: CommRange) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..positions.len() {
        for j in 0..positions.len() {
            if i != j && range.connects(positions[i], positions[j]) {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Quadrant index `[x >= 0] + 2 [y >= 0]`.
pub fn quadrant(p: [f64; 2]) -> usize {
    usize::from(p[0] >= 0.0) + 2 * usize::from(p[1] >= 0.0)
}

pub fn assign_partitions(positions: &[[f64; 2]]) -> Vec<usize> {
    positions.iter().map(|p| quadrant(*p)).collect()
}

pub fn build_hierarchy(spec: &HierarchySpec, positions: &[[f64; 2]], range: CommRange) -> HierGraph {
    let partition = if spec.levels == 3 {
        assign_partitions(positions)
    } else {
        Vec::new()
    };
    HierGraph {
        num_workers: positions.len(),
        worker_edges: build_worker_graph(positions, range),
        partition,
        num_submanagers: spec.num_submanagers(),
    }
}

/// Per-episode builder. With a static spec the partition is the one seen at
/// the first build of the episode; worker edges always follow positions.
#[derive(Debug, Clone)]
pub struct HierarchyTracker {
    spec: HierarchySpec,
    range: CommRange,
    frozen: Option<Vec<usize>>,
}

impl HierarchyTracker {
    pub fn new(spec: HierarchySpec, range: CommRange) -> Self {
        Self {
            spec,
            range,
            frozen: None,
        }
    }

    pub fn spec(&self) -> &HierarchySpec {
        &self.spec
    }

    pub fn reset(&mut self) {
        self.frozen = None;
    }

    pub fn build(&mut self, positions: &[[f64; 2]]) -> HierGraph {
        let mut g = build_hierarchy(&self.spec, positions, self.range);
        if !self.spec.dynamic {
            match &self.frozen {
                Some(p) => g.partition = p.clone(),
                None => self.frozen = Some(g.partition.clone()),
            }
        }
        g
    }
}
