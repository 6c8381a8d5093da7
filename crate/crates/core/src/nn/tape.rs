//! Reverse-mode differentiation over row-major matrices.
//!
//! Rows are graph nodes (or samples), columns are features. The tape only
//! knows the handful of operations the policies need; each forward call
//! records its inputs and the backward pass replays them in reverse.

use super::params::{ParamId, ParamStore};
use super::NnError;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        let cols = data.len();
        Self::from_vec(1, cols, data)
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the output value.
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub in_ch: usize,
    pub height: usize,
    pub width: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl ConvShape {
    pub fn out_height(&self) -> usize {
        self.height + 1 - self.kernel
    }

    pub fn out_width(&self) -> usize {
        self.width + 1 - self.kernel
    }

    pub fn input_len(&self) -> usize {
        self.in_ch * self.height * self.width
    }

    pub fn output_len(&self) -> usize {
        self.out_ch * self.out_height() * self.out_width()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: ParamId, b: Option<ParamId> },
    Act { x: Var, kind: Activation },
    Add(Var, Var),
    Concat(Vec<Var>),
    Cols { x: Var, start: usize },
    Gather { x: Var, idx: Vec<usize> },
    ScatterMean { x: Var, dst: Vec<usize> },
    WeightedScatter { x: Var, src: Vec<usize>, dst: Vec<usize>, w: Vec<f64> },
    Conv { x: Var, w: ParamId, b: ParamId, shape: ConvShape },
}

struct Node {
    value: Mat,
    op: Op,
}

/// Records a forward computation so gradients can be pulled back through it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients with respect to every recorded node, produced by [`Tape::backward`].
pub struct NodeGrads {
    grads: Vec<Option<Mat>>,
}

impl NodeGrads {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Mat) -> Var {
        self.push(m, Op::Leaf)
    }

    /// `y = x W^T + b` with `W` stored as `out x in`.
    pub fn linear(&mut self, store: &ParamStore, x: Var, w: ParamId, b: Option<ParamId>) -> Result<Var, NnError> {
        let wp = store.get(w);
        let xv = &self.nodes[x.0].value;
        if xv.cols != wp.cols {
            return Err(NnError::Dimension {
                layer: wp.name.clone(),
                expected: wp.cols,
                found: xv.cols,
            });
        }
        let (n, din, dout) = (xv.rows, wp.cols, wp.rows);
        let mut out = Mat::zeros(n, dout);
        for r in 0..n {
            let xr = &xv.data[r * din..(r + 1) * din];
            let yr = &mut out.data[r * dout..(r + 1) * dout];
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &wp.value[o * din..(o + 1) * din];
                *y = dot(xr, wr);
            }
            if let Some(b) = b {
                for (y, bv) in yr.iter_mut().zip(&store.get(b).value) {
                    *y += bv;
                }
            }
        }
        Ok(self.push(out, Op::Linear { x, w, b }))
    }

    pub fn act(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Identity {
            return x;
        }
        let xv = &self.nodes[x.0].value;
        let out = Mat {
            rows: xv.rows,
            cols: xv.cols,
            data: xv.data.iter().map(|v| kind.apply(*v)).collect(),
        };
        self.push(out, Op::Act { x, kind })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        assert_eq!((av.rows, av.cols), (bv.rows, bv.cols), "add shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x + y).collect();
        let out = Mat::from_vec(av.rows, av.cols, data);
        self.push(out, Op::Add(a, b))
    }

    /// Column-wise concatenation; all parts must have the same row count.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let rows = self.nodes[parts[0].0].value.rows;
        let cols: usize = parts.iter().map(|p| self.nodes[p.0].value.cols).sum();
        let mut out = Mat::zeros(rows, cols);
        for r in 0..rows {
            let mut c0 = 0;
            for p in parts {
                let pv = &self.nodes[p.0].value;
                assert_eq!(pv.rows, rows, "concat row mismatch");
                out.data[r * cols + c0..r * cols + c0 + pv.cols].copy_from_slice(pv.row(r));
                c0 += pv.cols;
            }
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    /// Columns `start..start+len` of `x`.
    pub fn cols(&mut self, x: Var, start: usize, len: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert!(start + len <= xv.cols, "column slice out of range");
        let mut out = Mat::zeros(xv.rows, len);
        for r in 0..xv.rows {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        self.push(out, Op::Cols { x, start })
    }

    /// Row `i` of the output is row `idx[i]` of `x`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut out = Mat::zeros(idx.len(), xv.cols);
        for (i, &j) in idx.iter().enumerate() {
            out.row_mut(i).copy_from_slice(xv.row(j));
        }
        self.push(out, Op::Gather { x, idx: idx.to_vec() })
    }

    /// Row `i` of the output is the mean of the rows `r` of `x` with
    /// `dst[r] == i`, or zero when there are none.
    pub fn scatter_mean(&mut self, x: Var, dst: &[usize], n: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        assert_eq!(xv.rows, dst.len(), "scatter index length");
        let mut out = Mat::zeros(n, xv.cols);
        let counts = bucket_counts(dst, n);
        for (r, &d) in dst.iter().enumerate() {
            let inv = 1.0 / counts[d] as f64;
            for (o, v) in out.row_mut(d).iter_mut().zip(xv.row(r)) {
                *o += v * inv;
            }
        }
        self.push(out, Op::ScatterMean { x, dst: dst.to_vec() })
    }

    /// `out[dst[e]] += w[e] * x[src[e]]` for every entry `e`.
    pub fn weighted_scatter(&mut self, x: Var, src: &[usize], dst: &[usize], w: &[f64], n: usize) -> Var {
        let xv = &self.nodes[x.0].value;
        let mut out = Mat::zeros(n, xv.cols);
        for e in 0..src.len() {
            let (s, d, we) = (src[e], dst[e], w[e]);
            for c in 0..xv.cols {
                out.data[d * xv.cols + c] += we * xv.data[s * xv.cols + c];
            }
        }
        self.push(
            out,
            Op::WeightedScatter {
                x,
                src: src.to_vec(),
                dst: dst.to_vec(),
                w: w.to_vec(),
            },
        )
    }

    /// Valid 2D convolution, stride 1. Each input row is one `in_ch x h x w`
    /// image; each output row is the flattened `out_ch x h' x w'` map.
    pub fn conv2d(&mut self, store: &ParamStore, x: Var, w: ParamId, b: ParamId, shape: ConvShape) -> Result<Var, NnError> {
        let xv = &self.nodes[x.0].value;
        let wp = store.get(w);
        if xv.cols != shape.input_len() {
            return Err(NnError::Dimension {
                layer: wp.name.clone(),
                expected: shape.input_len(),
                found: xv.cols,
            });
        }
        let bp = &store.get(b).value;
        let (oh, ow, k) = (shape.out_height(), shape.out_width(), shape.kernel);
        let mut out = Mat::zeros(xv.rows, shape.output_len());
        for r in 0..xv.rows {
            let img = xv.row(r);
            let dst = out.row_mut(r);
            for o in 0..shape.out_ch {
                for y in 0..oh {
                    for xx in 0..ow {
                        let mut acc = bp[o];
                        for c in 0..shape.in_ch {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let wi = ((o * shape.in_ch + c) * k + ky) * k + kx;
                                    let ii = (c * shape.height + y + ky) * shape.width + xx + kx;
                                    acc += wp.value[wi] * img[ii];
                                }
                            }
                        }
                        dst[(o * oh + y) * ow + xx] = acc;
                    }
                }
            }
        }
        Ok(self.push(out, Op::Conv { x, w, b, shape }))
    }

    /// Pulls `seeds` (upstream gradients of output nodes) back through the
    /// tape. Parameter gradients are added into `store`'s accumulators.
    pub fn backward(&self, store: &mut ParamStore, seeds: &[(Var, Mat)]) -> Result<NodeGrads, NnError> {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        for (v, g) in seeds {
            let node = &self.nodes[v.0].value;
            if (node.rows, node.cols) != (g.rows, g.cols) {
                return Err(NnError::Dimension {
                    layer: format!("upstream gradient for node {}", v.0),
                    expected: node.rows * node.cols,
                    found: g.rows * g.cols,
                });
            }
            accumulate(&mut grads, *v, g.clone());
        }
        for idx in (0..self.nodes.len()).rev() {
            let node = &self.nodes[idx];
            // leaf gradients stay in place for callers that want input gradients
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let (n, din, dout) = (xv.rows, xv.cols, gy.cols);
                    let mut gx = Mat::zeros(n, din);
                    {
                        let wv = &store.get(*w).value;
                        for r in 0..n {
                            let gyr = &gy.data[r * dout..(r + 1) * dout];
                            let gxr = &mut gx.data[r * din..(r + 1) * din];
                            for (o, &g) in gyr.iter().enumerate() {
                                if g != 0.0 {
                                    axpy(g, &wv[o * din..(o + 1) * din], gxr);
                                }
                            }
                        }
                    }
                    {
                        let wg = &mut store.get_mut(*w).grad;
                        for r in 0..n {
                            let xr = &xv.data[r * din..(r + 1) * din];
                            for o in 0..dout {
                                let g = gy.data[r * dout + o];
                                if g != 0.0 {
                                    axpy(g, xr, &mut wg[o * din..(o + 1) * din]);
                                }
                            }
                        }
                    }
                    if let Some(b) = b {
                        let bg = &mut store.get_mut(*b).grad;
                        for r in 0..n {
                            for (acc, g) in bg.iter_mut().zip(&gy.data[r * dout..(r + 1) * dout]) {
                                *acc += g;
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Act { x, kind } => {
                    let data = gy
                        .data
                        .iter()
                        .zip(&node.value.data)
                        .map(|(g, y)| g * kind.grad_from_output(*y))
                        .collect();
                    accumulate(&mut grads, *x, Mat::from_vec(gy.rows, gy.cols, data));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, gy.clone());
                    accumulate(&mut grads, *b, gy);
                }
                Op::Concat(parts) => {
                    let mut c0 = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.cols;
                        let mut gp = Mat::zeros(gy.rows, pc);
                        for r in 0..gy.rows {
                            gp.row_mut(r).copy_from_slice(&gy.row(r)[c0..c0 + pc]);
                        }
                        c0 += pc;
                        accumulate(&mut grads, *p, gp);
                    }
                }
                Op::Cols { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..gy.rows {
                        gx.row_mut(r)[*start..*start + gy.cols].copy_from_slice(gy.row(r));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather { x, idx } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for (i, &j) in idx.iter().enumerate() {
                        for (a, g) in gx.row_mut(j).iter_mut().zip(gy.row(i)) {
                            *a += g;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ScatterMean { x, dst } => {
                    let xv = &self.nodes[x.0].value;
                    let counts = bucket_counts(dst, gy.rows);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for (r, &d) in dst.iter().enumerate() {
                        let inv = 1.0 / counts[d] as f64;
                        for (a, g) in gx.row_mut(r).iter_mut().zip(gy.row(d)) {
                            *a = g * inv;
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::WeightedScatter { x, src, dst, w } => {
                    let xv = &self.nodes[x.0].value;
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for e in 0..src.len() {
                        let (s, d, we) = (src[e], dst[e], w[e]);
                        for c in 0..xv.cols {
                            gx.data[s * xv.cols + c] += we * gy.data[d * gy.cols + c];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Conv { x, w, b, shape } => {
                    let xv = &self.nodes[x.0].value;
                    let (oh, ow, k) = (shape.out_height(), shape.out_width(), shape.kernel);
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    let wv = store.get(*w).value.clone();
                    let mut gw = vec![0.0; wv.len()];
                    let mut gb = vec![0.0; shape.out_ch];
                    for r in 0..xv.rows {
                        let img = xv.row(r);
                        let gimg = gx.row_mut(r);
                        let go = gy.row(r);
                        for o in 0..shape.out_ch {
                            for y in 0..oh {
                                for xx in 0..ow {
                                    let g = go[(o * oh + y) * ow + xx];
                                    if g == 0.0 {
                                        continue;
                                    }
                                    gb[o] += g;
                                    for c in 0..shape.in_ch {
                                        for ky in 0..k {
                                            for kx in 0..k {
                                                let wi = ((o * shape.in_ch + c) * k + ky) * k + kx;
                                                let ii = (c * shape.height + y + ky) * shape.width + xx + kx;
                                                gw[wi] += g * img[ii];
                                                gimg[ii] += g * wv[wi];
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                    for (a, g) in store.get_mut(*w).grad.iter_mut().zip(&gw) {
                        *a += g;
                    }
                    for (a, g) in store.get_mut(*b).grad.iter_mut().zip(&gb) {
                        *a += g;
                    }
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(NodeGrads { grads })
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn bucket_counts(dst: &[usize], n: usize) -> Vec<usize> {
    let mut counts = vec![0usize; n];
    for &d in dst {
        counts[d] += 1;
    }
    counts
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
