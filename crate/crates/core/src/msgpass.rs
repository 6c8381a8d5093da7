//! Latent pipeline: encode raw observations, initialise the upper levels
//! bottom-up, run message-passing rounds and assemble the policy inputs.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::hiergraph::{complete_edges, HierGraph, QUADRANTS};
use crate::nn::{Activation, ConvShape, ConvSpec, Conv2d, Group, Linear, Mat, Mlp, NetSpec, NnError, ParamStore, Tape, Var};

/// Layout of a worker's raw observation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObsSchema {
    Vector { len: usize },
    /// `channels x side x side` local grids plus an auxiliary vector.
    Grid { channels: usize, side: usize, aux: usize },
}

impl ObsSchema {
    pub fn grid_len(&self) -> usize {
        match *self {
            ObsSchema::Vector { .. } => 0,
            ObsSchema::Grid { channels, side, .. } => channels * side * side,
        }
    }

    pub fn vector_len(&self) -> usize {
        match *self {
            ObsSchema::Vector { len } => len,
            ObsSchema::Grid { aux, .. } => aux,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RawObs {
    pub grid: Vec<f64>,
    pub vector: Vec<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum MsgPassError {
    #[error("observation of worker {worker} does not match the schema: expected grid {grid} + vector {vector}, found {found_grid} + {found_vector}")]
    Schema {
        worker: usize,
        grid: usize,
        vector: usize,
        found_grid: usize,
        found_vector: usize,
    },
    #[error("missing goal for row {0}")]
    MissingGoal(usize),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Message function family for a level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MpForm {
    Mlp,
    Gcn,
}

/// Directed edges of one level, plus symmetric-normalised weights with self
/// loops for the graph-convolution form.
#[derive(Debug, Clone, Default)]
pub struct EdgeIndex {
    pub n: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    gcn_src: Vec<usize>,
    gcn_dst: Vec<usize>,
    gcn_w: Vec<f64>,
}

impl EdgeIndex {
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut deg = vec![0usize; n];
        for &(_, d) in edges {
            deg[d] += 1;
        }
        let mut gs = Vec::with_capacity(edges.len() + n);
        let mut gd = Vec::with_capacity(edges.len() + n);
        let mut gw = Vec::with_capacity(edges.len() + n);
        for i in 0..n {
            gs.push(i);
            gd.push(i);
            gw.push(1.0 / (deg[i] + 1) as f64);
        }
        for &(s, d) in edges {
            gs.push(s);
            gd.push(d);
            gw.push(1.0 / (((deg[s] + 1) * (deg[d] + 1)) as f64).sqrt());
        }
        Self {
            n,
            src: edges.iter().map(|e| e.0).collect(),
            dst: edges.iter().map(|e| e.1).collect(),
            gcn_src: gs,
            gcn_dst: gd,
            gcn_w: gw,
        }
    }
}

/// One environment step of a graph: raw observations and the hierarchy.
#[derive(Debug, Clone, Copy)]
pub struct Snapshot<'a> {
    pub obs: &'a [RawObs],
    pub graph: &'a HierGraph,
}

/// Disjoint union of several snapshots, laid out row-wise.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub num_workers: usize,
    pub grid: Option<Mat>,
    pub vector: Mat,
    pub workers: EdgeIndex,
    /// Snapshot index of each worker row.
    pub worker_group: Vec<usize>,
    pub num_groups: usize,
    /// Global sub-manager row of each worker (3-level batches only).
    pub partition: Vec<usize>,
    pub subs: EdgeIndex,
    pub sub_group: Vec<usize>,
    pub tags: Mat,
    /// First worker row and first sub-manager row of each snapshot.
    pub worker_offset: Vec<usize>,
    pub sub_offset: Vec<usize>,
}

impl GraphBatch {
    pub fn new(schema: ObsSchema, snaps: &[Snapshot<'_>]) -> Result<Self, MsgPassError> {
        let (gl, vl) = (schema.grid_len(), schema.vector_len());
        let num_workers: usize = snaps.iter().map(|s| s.obs.len()).sum();
        let num_subs: usize = snaps.iter().map(|s| s.graph.num_submanagers).sum();
        let mut grid = Vec::with_capacity(num_workers * gl);
        let mut vector = Vec::with_capacity(num_workers * vl);
        let mut wedges = Vec::new();
        let mut sedges = Vec::new();
        let mut worker_group = Vec::with_capacity(num_workers);
        let mut partition = Vec::new();
        let mut sub_group = Vec::with_capacity(num_subs);
        let mut tags = Vec::with_capacity(num_subs * QUADRANTS);
        let mut worker_offset = Vec::with_capacity(snaps.len());
        let mut sub_offset = Vec::with_capacity(snaps.len());
        let (mut w0, mut s0) = (0usize, 0usize);
        for (g, snap) in snaps.iter().enumerate() {
            for (i, o) in snap.obs.iter().enumerate() {
                if o.grid.len() != gl || o.vector.len() != vl {
                    return Err(MsgPassError::Schema {
                        worker: i,
                        grid: gl,
                        vector: vl,
                        found_grid: o.grid.len(),
                        found_vector: o.vector.len(),
                    });
                }
                grid.extend_from_slice(&o.grid);
                vector.extend_from_slice(&o.vector);
                worker_group.push(g);
            }
            wedges.extend(snap.graph.worker_edges.iter().map(|&(a, b)| (a + w0, b + w0)));
            partition.extend(snap.graph.partition.iter().map(|&s| s + s0));
            let ns = snap.graph.num_submanagers;
            sedges.extend(complete_edges(ns).into_iter().map(|(a, b)| (a + s0, b + s0)));
            for s in 0..ns {
                sub_group.push(g);
                tags.extend(snap.graph.tag(s));
            }
            worker_offset.push(w0);
            sub_offset.push(s0);
            w0 += snap.obs.len();
            s0 += ns;
        }
        let tag_cols = if num_subs > 0 { QUADRANTS } else { 0 };
        Ok(Self {
            num_workers,
            grid: (gl > 0).then(|| Mat::from_vec(num_workers, gl, grid)),
            vector: Mat::from_vec(num_workers, vl, vector),
            workers: EdgeIndex::new(num_workers, &wedges),
            worker_group,
            num_groups: snaps.len(),
            partition,
            subs: EdgeIndex::new(num_subs, &sedges),
            sub_group,
            tags: Mat::from_vec(num_subs, tag_cols, tags),
            worker_offset,
            sub_offset,
        })
    }

    pub fn num_subs(&self) -> usize {
        self.subs.n
    }
}

/// Raw observation to `h^{w,0}`.
#[derive(Debug, Clone)]
pub enum Encoder {
    Vector { lin: Linear },
    Grid { conv: Conv2d, proj: Linear, aux: Linear },
}

impl Encoder {
    pub fn new(store: &mut ParamStore, name: &str, schema: ObsSchema, conv: ConvSpec, d: usize, group: Group, rng: &mut ChaCha8Rng) -> Self {
        match schema {
            ObsSchema::Vector { len } => Encoder::Vector {
                lin: Linear::new(store, &format!("{name}.lin"), len, d, group, rng),
            },
            ObsSchema::Grid { channels, side, aux } => {
                let shape = ConvShape {
                    in_ch: channels,
                    height: side,
                    width: side,
                    out_ch: conv.out_channels,
                    kernel: conv.kernel,
                };
                Encoder::Grid {
                    conv: Conv2d::new(store, &format!("{name}.conv"), shape, group, rng),
                    proj: Linear::new(store, &format!("{name}.proj"), shape.output_len(), d, group, rng),
                    aux: Linear::new(store, &format!("{name}.aux"), aux, d, group, rng),
                }
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var, NnError> {
        let vector = tape.input(batch.vector.clone());
        match self {
            Encoder::Vector { lin } => {
                let y = lin.forward(tape, store, vector)?;
                Ok(tape.act(y, Activation::Relu))
            }
            Encoder::Grid { conv, proj, aux } => {
                let grid = batch.grid.clone().unwrap_or_else(|| Mat::zeros(batch.num_workers, 0));
                let grid = tape.input(grid);
                let c = conv.forward(tape, store, grid)?;
                let a = proj.forward(tape, store, c)?;
                let b = aux.forward(tape, store, vector)?;
                let s = tape.add(a, b);
                Ok(tape.act(s, Activation::Relu))
            }
        }
    }
}

/// One message-passing round over a level's graph.
#[derive(Debug, Clone)]
pub enum MpRound {
    /// `h' = relu(UP[h || mean_j MSG(h || h_j)])`, zero aggregate when isolated.
    Mlp { msg: Mlp, up: Linear },
    /// `h' = relu(W sum_j c_ij h_j + b)` over neighbours and self.
    Gcn { lin: Linear },
}

impl MpRound {
    pub fn new(store: &mut ParamStore, name: &str, form: MpForm, d: usize, hidden: usize, group: Group, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        Ok(match form {
            MpForm::Mlp => MpRound::Mlp {
                msg: Mlp::new(store, &format!("{name}.msg"), &NetSpec::mlp(&[2 * d, hidden, d]), group, rng)?,
                up: Linear::new(store, &format!("{name}.up"), 2 * d, d, group, rng),
            },
            MpForm::Gcn => MpRound::Gcn {
                lin: Linear::new(store, &format!("{name}.gcn"), d, d, group, rng),
            },
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, h: Var, edges: &EdgeIndex) -> Result<Var, NnError> {
        match self {
            MpRound::Mlp { msg, up } => {
                let agg = if edges.src.is_empty() {
                    let d = tape.value(h).cols;
                    tape.input(Mat::zeros(edges.n, d))
                } else {
                    let hi = tape.gather(h, &edges.dst);
                    let hj = tape.gather(h, &edges.src);
                    let pair = tape.concat(&[hi, hj]);
                    let m = msg.forward(tape, store, pair)?;
                    tape.scatter_mean(m, &edges.dst, edges.n)
                };
                let cat = tape.concat(&[h, agg]);
                let y = up.forward(tape, store, cat)?;
                Ok(tape.act(y, Activation::Relu))
            }
            MpRound::Gcn { lin } => {
                let agg = tape.weighted_scatter(h, &edges.gcn_src, &edges.gcn_dst, &edges.gcn_w, edges.n);
                let y = lin.forward(tape, store, agg)?;
                Ok(tape.act(y, Activation::Relu))
            }
        }
    }
}

/// Which parts of the pipeline a level needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrunkSpec {
    pub d: usize,
    pub msg_hidden: usize,
    pub conv: ConvSpec,
    pub worker_rounds: usize,
    pub worker_form: MpForm,
    /// Sub-manager level: bottom-up initialisation and its own rounds.
    pub sub_rounds: Option<usize>,
    /// Manager representation, pooled from sub-managers when present,
    /// otherwise from workers.
    pub manager: bool,
}

#[derive(Debug, Clone)]
pub struct Trunk {
    pub spec: TrunkSpec,
    encoder: Encoder,
    worker_rounds: Vec<MpRound>,
    sub_init: Option<Linear>,
    sub_rounds: Vec<MpRound>,
    manager_init: Option<Linear>,
}

/// Representations produced by a trunk forward pass.
#[derive(Debug, Clone, Copy)]
pub struct TrunkOut {
    pub hw0: Var,
    pub hwl: Var,
    pub hs0: Option<Var>,
    pub hsl: Option<Var>,
    /// One row per snapshot.
    pub hm: Option<Var>,
}

impl Trunk {
    pub fn new(store: &mut ParamStore, name: &str, schema: ObsSchema, spec: TrunkSpec, group: Group, rng: &mut ChaCha8Rng) -> Result<Self, NnError> {
        let d = spec.d;
        let encoder = Encoder::new(store, &format!("{name}.enc"), schema, spec.conv, d, group, rng);
        let worker_rounds = (0..spec.worker_rounds)
            .map(|l| MpRound::new(store, &format!("{name}.wmp{l}"), spec.worker_form, d, spec.msg_hidden, group, rng))
            .collect::<Result<_, _>>()?;
        let (sub_init, sub_rounds) = match spec.sub_rounds {
            Some(r) => (
                Some(Linear::new(store, &format!("{name}.sinit"), d + QUADRANTS, d, group, rng)),
                (0..r)
                    .map(|l| MpRound::new(store, &format!("{name}.smp{l}"), MpForm::Mlp, d, spec.msg_hidden, group, rng))
                    .collect::<Result<_, _>>()?,
            ),
            None => (None, Vec::new()),
        };
        let manager_init = spec
            .manager
            .then(|| Linear::new(store, &format!("{name}.minit"), d, d, group, rng));
        Ok(Self {
            spec,
            encoder,
            worker_rounds,
            sub_init,
            sub_rounds,
            manager_init,
        })
    }

    pub fn encode(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<Var, NnError> {
        self.encoder.forward(tape, store, batch)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, batch: &GraphBatch) -> Result<TrunkOut, NnError> {
        let hw0 = self.encode(tape, store, batch)?;
        let mut hwl = hw0;
        for round in &self.worker_rounds {
            hwl = round.forward(tape, store, hwl, &batch.workers)?;
        }
        let (mut hs0, mut hsl) = (None, None);
        if let Some(init) = &self.sub_init {
            let pooled = tape.scatter_mean(hw0, &batch.partition, batch.num_subs());
            let tags = tape.input(batch.tags.clone());
            let cat = tape.concat(&[pooled, tags]);
            let y = init.forward(tape, store, cat)?;
            let h = tape.act(y, Activation::Relu);
            let mut hl = h;
            for round in &self.sub_rounds {
                hl = round.forward(tape, store, hl, &batch.subs)?;
            }
            hs0 = Some(h);
            hsl = Some(hl);
        }
        let hm = match (&self.manager_init, hs0) {
            (None, _) => None,
            (Some(init), Some(hs)) => {
                let pooled = tape.scatter_mean(hs, &batch.sub_group, batch.num_groups);
                let y = init.forward(tape, store, pooled)?;
                Some(tape.act(y, Activation::Relu))
            }
            (Some(init), None) => {
                let pooled = tape.scatter_mean(hw0, &batch.worker_group, batch.num_groups);
                let y = init.forward(tape, store, pooled)?;
                Some(tape.act(y, Activation::Relu))
            }
        };
        Ok(TrunkOut { hw0, hwl, hs0, hsl, hm })
    }
}

/// The level whose policy input is being assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// `o^{m->s} = h^m || h^{s,0} || h^{s,L}`, one row per sub-manager.
    Manager,
    /// `o^{m->w} = h^m || h^{w,0} || h^{w,L}`, one row per worker.
    ManagerOfWorkers,
    /// `o^{s->w} = g^{m->s} || h^{s,L} || h^{w,0} || h^{w,L}`.
    SubManager,
    /// `o^w = g || h^{w,0} || h^{w,L}`.
    Worker,
    /// Flat baselines: `h^{w,0} || h^{w,L}`, or `h^{w,0}` without rounds.
    Flat,
}

impl Role {
    pub fn input_dim(self, d: usize, rounds: usize) -> usize {
        match self {
            Role::Manager | Role::ManagerOfWorkers | Role::Worker => 3 * d,
            Role::SubManager => 4 * d,
            Role::Flat => {
                if rounds > 0 {
                    2 * d
                } else {
                    d
                }
            }
        }
    }

    pub fn needs_goal(self) -> bool {
        matches!(self, Role::SubManager | Role::Worker)
    }

    /// Rows are sub-managers rather than workers.
    pub fn rows_are_subs(self) -> bool {
        self == Role::Manager
    }

    pub fn trunk_spec(self, base: TrunkSpec) -> TrunkSpec {
        match self {
            Role::Manager => TrunkSpec {
                worker_rounds: 0,
                manager: true,
                ..base
            },
            Role::ManagerOfWorkers => TrunkSpec {
                sub_rounds: None,
                manager: true,
                ..base
            },
            Role::SubManager => TrunkSpec { manager: false, ..base },
            Role::Worker | Role::Flat => TrunkSpec {
                sub_rounds: None,
                manager: false,
                ..base
            },
        }
    }
}

/// Concatenates the level's policy input for the selected `rows`. `goals`
/// holds one held goal per selected row for roles that need one.
pub fn assemble_inputs(
    tape: &mut Tape,
    role: Role,
    out: &TrunkOut,
    batch: &GraphBatch,
    rows: &[usize],
    goals: Option<&Mat>,
) -> Result<Var, MsgPassError> {
    let goal = if role.needs_goal() {
        let g = goals.ok_or(MsgPassError::MissingGoal(rows.first().copied().unwrap_or(0)))?;
        if g.rows != rows.len() {
            return Err(MsgPassError::MissingGoal(g.rows.min(rows.len())));
        }
        Some(tape.input(g.clone()))
    } else {
        None
    };
    let worker_parts = |tape: &mut Tape| (tape.gather(out.hw0, rows), tape.gather(out.hwl, rows));
    let missing = || MsgPassError::Nn(NnError::Spec(format!("trunk lacks the representations needed by {role:?}")));
    Ok(match role {
        Role::Manager => {
            let (hs0, hsl, hm) = (out.hs0.ok_or_else(missing)?, out.hsl.ok_or_else(missing)?, out.hm.ok_or_else(missing)?);
            let groups: Vec<usize> = rows.iter().map(|&s| batch.sub_group[s]).collect();
            let m = tape.gather(hm, &groups);
            let a = tape.gather(hs0, rows);
            let b = tape.gather(hsl, rows);
            tape.concat(&[m, a, b])
        }
        Role::ManagerOfWorkers => {
            let hm = out.hm.ok_or_else(missing)?;
            let groups: Vec<usize> = rows.iter().map(|&w| batch.worker_group[w]).collect();
            let m = tape.gather(hm, &groups);
            let (a, b) = worker_parts(tape);
            tape.concat(&[m, a, b])
        }
        Role::SubManager => {
            let hsl = out.hsl.ok_or_else(missing)?;
            let sups: Vec<usize> = rows.iter().map(|&w| batch.partition[w]).collect();
            let s = tape.gather(hsl, &sups);
            let (a, b) = worker_parts(tape);
            tape.concat(&[goal.expect("goal checked above"), s, a, b])
        }
        Role::Worker => {
            let (a, b) = worker_parts(tape);
            tape.concat(&[goal.expect("goal checked above"), a, b])
        }
        Role::Flat => {
            let (a, b) = worker_parts(tape);
            if out.hw0 == out.hwl {
                a
            } else {
                tape.concat(&[a, b])
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hiergraph::{build_hierarchy, CommRange, HierarchySpec};
    use rand::{Rng, SeedableRng};

    const D: usize = 8;

    fn spec(form: MpForm, sub: bool) -> TrunkSpec {
        TrunkSpec {
            d: D,
            msg_hidden: 16,
            conv: ConvSpec { out_channels: 2, kernel: 2 },
            worker_rounds: 1,
            worker_form: form,
            sub_rounds: sub.then_some(1),
            manager: true,
        }
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize, len: usize) -> Vec<RawObs> {
        (0..n)
            .map(|_| RawObs {
                grid: Vec::new(),
                vector: (0..len).map(|_| rng.random_range(-1.0..1.0)).collect(),
            })
            .collect()
    }

    fn rows(tape: &Tape, v: Var) -> Vec<Vec<f64>> {
        let m = tape.value(v);
        (0..m.rows).map(|r| m.row(r).to_vec()).collect()
    }

    #[test]
    fn zero_encoder_outputs_activation_of_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let schema = ObsSchema::Vector { len: 3 };
        let enc = Encoder::new(&mut store, "e", schema, ConvSpec { out_channels: 1, kernel: 1 }, 4, Group::Actor, &mut rng);
        let Encoder::Vector { lin } = &enc else { unreachable!() };
        store.get_mut(lin.w).value.iter_mut().for_each(|v| *v = 0.0);
        store.get_mut(lin.b.unwrap()).value.copy_from_slice(&[0.5, -1.0, 0.0, 2.0]);
        let obs = vec![RawObs { grid: vec![], vector: vec![0.0; 3] }];
        let g = build_hierarchy(&HierarchySpec::two_level(1), &[[0.0, 0.0]], CommRange::Euclidean(1.0));
        let batch = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
        let mut tape = Tape::new();
        let h = enc.forward(&mut tape, &store, &batch).unwrap();
        assert_eq!(tape.value(h).data, vec![0.5, 0.0, 0.0, 2.0]);
    }

    #[test]
    fn grid_encoder_consumes_both_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let schema = ObsSchema::Grid { channels: 3, side: 5, aux: 4 };
        let enc = Encoder::new(&mut store, "e", schema, ConvSpec { out_channels: 8, kernel: 2 }, D, Group::Actor, &mut rng);
        let g = build_hierarchy(&HierarchySpec::two_level(1), &[[0.0, 0.0]], CommRange::Chebyshev(2.0));
        let eval = |grid: Vec<f64>, aux: Vec<f64>| {
            let obs = vec![RawObs { grid, vector: aux }];
            let batch = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
            let mut tape = Tape::new();
            let h = enc.forward(&mut tape, &store, &batch).unwrap();
            tape.value(h).data.clone()
        };
        let base = eval(vec![0.0; 75], vec![0.0; 4]);
        let mut grid = vec![0.0; 75];
        grid[12] = 1.0;
        assert_ne!(base, eval(grid, vec![0.0; 4]));
        assert_ne!(base, eval(vec![0.0; 75], vec![0.0, 1.0, 0.3, -0.2]));
    }

    #[test]
    fn schema_mismatch_is_reported() {
        let obs = vec![RawObs { grid: vec![], vector: vec![0.0; 2] }];
        let g = build_hierarchy(&HierarchySpec::two_level(1), &[[0.0, 0.0]], CommRange::Euclidean(1.0));
        let err = GraphBatch::new(ObsSchema::Vector { len: 3 }, &[Snapshot { obs: &obs, graph: &g }]).unwrap_err();
        assert!(matches!(err, MsgPassError::Schema { worker: 0, .. }));
    }

    #[test]
    fn isolated_node_aggregates_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let round = MpRound::new(&mut store, "r", MpForm::Mlp, D, 16, Group::Actor, &mut rng).unwrap();
        let MpRound::Mlp { up, .. } = &round else { unreachable!() };
        let up = *up;
        let h: Vec<f64> = (0..D).map(|i| i as f64 * 0.1 - 0.3).collect();
        let mut tape = Tape::new();
        let hv = tape.input(Mat::row_vector(h.clone()));
        let out = round.forward(&mut tape, &store, hv, &EdgeIndex::new(1, &[])).unwrap();
        let got = tape.value(out).data.clone();
        let mut tape2 = Tape::new();
        let mut cat = h;
        cat.extend(vec![0.0; D]);
        let x = tape2.input(Mat::row_vector(cat));
        let y = up.forward(&mut tape2, &store, x).unwrap();
        let y = tape2.act(y, Activation::Relu);
        assert_eq!(got, tape2.value(y).data);
    }

    #[test]
    fn single_neighbour_aggregate_is_its_message() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        let round = MpRound::new(&mut store, "r", MpForm::Mlp, D, 16, Group::Actor, &mut rng).unwrap();
        let MpRound::Mlp { msg, up } = &round else { unreachable!() };
        let h0: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h1: Vec<f64> = (0..D).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tape = Tape::new();
        let mut both = h0.clone();
        both.extend(&h1);
        let hv = tape.input(Mat::from_vec(2, D, both));
        let out = round.forward(&mut tape, &store, hv, &EdgeIndex::new(2, &[(1, 0), (0, 1)])).unwrap();
        let got = tape.value(out).row(0).to_vec();
        let mut pair = h0.clone();
        pair.extend(&h1);
        let m = msg.eval(&store, &pair).unwrap();
        let mut cat = h0;
        cat.extend(m);
        let mut t2 = Tape::new();
        let x = t2.input(Mat::row_vector(cat));
        let y = up.forward(&mut t2, &store, x).unwrap();
        let y = t2.act(y, Activation::Relu);
        for (a, b) in got.iter().zip(&t2.value(y).data) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn bottom_up_singleton_permutation_and_empty_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let schema = ObsSchema::Vector { len: 3 };
        let trunk = Trunk::new(&mut store, "t", schema, spec(MpForm::Mlp, true), Group::Actor, &mut rng).unwrap();
        let hs = HierarchySpec::three_level(1, 1, true);
        let pos = [[-0.5, -0.5], [-0.4, -0.6], [0.5, -0.5]];
        let obs = random_obs(&mut rng, 3, 3);
        let g = build_hierarchy(&hs, &pos, CommRange::Euclidean(0.3));
        let batch = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
        let mut tape = Tape::new();
        let out = trunk.forward(&mut tape, &store, &batch).unwrap();
        let hw0 = rows(&tape, out.hw0);
        let hs0 = rows(&tape, out.hs0.unwrap());

        let sinit = trunk.sub_init.unwrap();
        let lin = |x: Vec<f64>| {
            let mut t = Tape::new();
            let v = t.input(Mat::row_vector(x));
            let y = sinit.forward(&mut t, &store, v).unwrap();
            let y = t.act(y, Activation::Relu);
            t.value(y).data.clone()
        };
        // cell 1 has only worker 2
        let mut x = hw0[2].clone();
        x.extend([0.0, 1.0, 0.0, 0.0]);
        assert_eq!(hs0[1], lin(x));
        // cell 2 is empty
        let mut x = vec![0.0; D];
        x.extend([0.0, 0.0, 1.0, 0.0]);
        assert_eq!(hs0[2], lin(x));

        // swapping the two workers of cell 0 leaves h^{s,0} unchanged
        let obs_sw = vec![obs[1].clone(), obs[0].clone(), obs[2].clone()];
        let pos_sw = [pos[1], pos[0], pos[2]];
        let g2 = build_hierarchy(&hs, &pos_sw, CommRange::Euclidean(0.3));
        let b2 = GraphBatch::new(schema, &[Snapshot { obs: &obs_sw, graph: &g2 }]).unwrap();
        let mut t2 = Tape::new();
        let o2 = trunk.forward(&mut t2, &store, &b2).unwrap();
        for (a, b) in hs0[0].iter().zip(&rows(&t2, o2.hs0.unwrap())[0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn tags_break_cell_symmetry() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut store = ParamStore::new();
        let schema = ObsSchema::Vector { len: 3 };
        let trunk = Trunk::new(&mut store, "t", schema, spec(MpForm::Mlp, true), Group::Actor, &mut rng).unwrap();
        let hs = HierarchySpec::three_level(1, 1, true);
        let obs = random_obs(&mut rng, 1, 3);
        let eval = |p: [f64; 2]| {
            let g = build_hierarchy(&hs, &[p], CommRange::Euclidean(0.3));
            let b = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
            let mut t = Tape::new();
            let o = trunk.forward(&mut t, &store, &b).unwrap();
            let s = g.partition[0];
            rows(&t, o.hs0.unwrap())[s].clone()
        };
        assert_ne!(eval([-0.5, -0.5]), eval([0.5, 0.5]));
    }

    #[test]
    fn level_input_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let d = 64;
        let schema = ObsSchema::Vector { len: 5 };
        let base = TrunkSpec {
            d,
            msg_hidden: 64,
            conv: ConvSpec { out_channels: 8, kernel: 2 },
            worker_rounds: 1,
            worker_form: MpForm::Gcn,
            sub_rounds: Some(1),
            manager: true,
        };
        let hs = HierarchySpec::three_level(5, 2, true);
        let pos = [[-0.5, -0.5], [0.5, 0.5], [0.2, 0.4]];
        let obs = random_obs(&mut rng, 3, 5);
        let g = build_hierarchy(&hs, &pos, CommRange::Euclidean(0.5));
        let batch = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
        for (role, rows, len) in [
            (Role::Manager, vec![0, 1, 2, 3], 192),
            (Role::SubManager, vec![0, 1, 2], 256),
            (Role::Worker, vec![0, 1, 2], 192),
            (Role::ManagerOfWorkers, vec![0, 1, 2], 192),
        ] {
            let mut store = ParamStore::new();
            let trunk = Trunk::new(&mut store, "t", schema, role.trunk_spec(base), Group::Actor, &mut rng).unwrap();
            let mut tape = Tape::new();
            let out = trunk.forward(&mut tape, &store, &batch).unwrap();
            let goals = Mat::zeros(rows.len(), d);
            let x = assemble_inputs(&mut tape, role, &out, &batch, &rows, Some(&goals)).unwrap();
            assert_eq!(tape.value(x).cols, len, "{role:?}");
            assert_eq!(role.input_dim(d, 1), len);
        }
    }

    #[test]
    fn held_goal_occupies_leading_slot() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let schema = ObsSchema::Vector { len: 3 };
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "t", schema, Role::Worker.trunk_spec(spec(MpForm::Mlp, false)), Group::Actor, &mut rng).unwrap();
        let obs = random_obs(&mut rng, 2, 3);
        let g = build_hierarchy(&HierarchySpec::two_level(5), &[[0.0, 0.0], [1.0, 0.0]], CommRange::Chebyshev(1.0));
        let batch = GraphBatch::new(schema, &[Snapshot { obs: &obs, graph: &g }]).unwrap();
        let mut tape = Tape::new();
        let out = trunk.forward(&mut tape, &store, &batch).unwrap();
        let goals = Mat::from_vec(2, D, (0..2 * D).map(|i| i as f64).collect());
        let x = assemble_inputs(&mut tape, Role::Worker, &out, &batch, &[0, 1], Some(&goals)).unwrap();
        assert_eq!(&tape.value(x).row(1)[..D], goals.row(1));
        assert!(assemble_inputs(&mut tape, Role::Worker, &out, &batch, &[0, 1], None).is_err());
    }

    #[test]
    fn disjoint_union_matches_separate_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let schema = ObsSchema::Vector { len: 3 };
        let mut store = ParamStore::new();
        let trunk = Trunk::new(&mut store, "t", schema, spec(MpForm::Gcn, true), Group::Actor, &mut rng).unwrap();
        let hs = HierarchySpec::three_level(1, 1, true);
        let pa = [[-0.5, -0.5], [-0.3, -0.4], [0.5, 0.1]];
        let pb = [[0.5, 0.5], [0.6, 0.4]];
        let (oa, ob) = (random_obs(&mut rng, 3, 3), random_obs(&mut rng, 2, 3));
        let (ga, gb) = (build_hierarchy(&hs, &pa, CommRange::Euclidean(0.5)), build_hierarchy(&hs, &pb, CommRange::Euclidean(0.5)));
        let single = |o: &[RawObs], g: &HierGraph| {
            let b = GraphBatch::new(schema, &[Snapshot { obs: o, graph: g }]).unwrap();
            let mut t = Tape::new();
            let out = trunk.forward(&mut t, &store, &b).unwrap();
            (rows(&t, out.hwl), rows(&t, out.hsl.unwrap()), rows(&t, out.hm.unwrap()))
        };
        let (wa, sa, ma) = single(&oa, &ga);
        let (wb, sb, mb) = single(&ob, &gb);
        let b = GraphBatch::new(schema, &[Snapshot { obs: &oa, graph: &ga }, Snapshot { obs: &ob, graph: &gb }]).unwrap();
        let mut t = Tape::new();
        let out = trunk.forward(&mut t, &store, &b).unwrap();
        let close = |x: &[Vec<f64>], y: &[Vec<f64>]| {
            x.iter().flatten().zip(y.iter().flatten()).all(|(a, b)| (a - b).abs() < 1e-12)
        };
        let w = rows(&t, out.hwl);
        assert!(close(&w[..3], &wa) && close(&w[3..], &wb));
        let s = rows(&t, out.hsl.unwrap());
        assert!(close(&s[..4], &sa) && close(&s[4..], &sb));
        let m = rows(&t, out.hm.unwrap());
        assert!(close(&m[..1], &ma) && close(&m[1..], &mb));
    }
}
