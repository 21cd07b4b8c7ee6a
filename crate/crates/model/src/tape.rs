//! Minimal reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters are
//! borrowed from a [`ParamStore`] rather than copied; [`Tape::backward`] adds
//! their gradients into a [`Grads`] buffer of matching shapes.

use dagnat_core::dp::{loss_grad, loss_max_grad};
use dagnat_core::Dag;
use ndarray::{concatenate, s, Array2, ArrayView2, Axis, Zip};

use crate::params::{Grads, ParamStore};
use crate::ModelError;

pub type NodeId = usize;

const LN_EPS: f64 = 1e-5;

/// Which path objective a DAG-loss node optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Negative log of the likelihood summed over all paths.
    Sum,
    /// Negative log of the most probable path.
    Max,
}

impl std::str::FromStr for Objective {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, ModelError> {
        match s {
            "sum" => Ok(Self::Sum),
            "max" => Ok(Self::Max),
            other => Err(ModelError::Config(format!("unknown objective {other:?}"))),
        }
    }
}

enum Op {
    Param(usize),
    Const,
    MatMul(NodeId, NodeId),
    /// `a * b^T`
    MatMulBT(NodeId, NodeId),
    Add(NodeId, NodeId),
    /// `a + b` with the `1 x n` row `b` broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    /// Elementwise mask already divided by the keep probability.
    Dropout(NodeId, Array2<f64>),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(NodeId),
    LogSoftmax(NodeId),
    /// Row-wise log-softmax over strictly later columns only; the last row
    /// has no support and is all `-inf`.
    ForwardLogSoftmax(NodeId),
    /// `ln((1 - eps) p + eps / n)` of a log-probability row.
    Smooth(NodeId, f64),
    Cols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    /// Rows of `table`; `None` selects a zero row.
    Gather(NodeId, Vec<Option<usize>>),
    DagLoss {
        log_p: NodeId,
        log_e: NodeId,
        d_log_p: Array2<f64>,
        d_log_e: Array2<f64>,
    },
}

struct Node {
    /// Empty for parameter leaves, whose value lives in the store.
    value: Array2<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(512),
        }
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        match self.nodes[id].op {
            Op::Param(p) => self.params.value(p).view(),
            _ => self.nodes[id].value.view(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.push(Array2::zeros((0, 0)), Op::Param(index))
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulBT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = &self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// `mask` holds 0 or `1 / keep` per entry.
    pub fn dropout(&mut self, a: NodeId, mask: Array2<f64>) -> NodeId {
        let v = &self.value(a) * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId) -> NodeId {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|v| v * v).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let v = &(&xhat * &self.value(gain)) + &self.value(bias);
        self.push(
            v,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(v, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).to_owned();
        for mut row in v.rows_mut() {
            log_normalize(row.as_slice_mut().expect("contiguous row"));
        }
        self.push(v, Op::LogSoftmax(a))
    }

    /// Square input; entry `(i, j)` survives only for `j > i`.
    pub fn forward_log_softmax(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).to_owned();
        let n = v.nrows();
        debug_assert_eq!(n, v.ncols());
        for (i, mut row) in v.rows_mut().into_iter().enumerate() {
            let row = row.as_slice_mut().expect("contiguous row");
            row[..=i].fill(f64::NEG_INFINITY);
            if i + 1 < n {
                log_normalize(&mut row[i + 1..]);
            }
        }
        self.push(v, Op::ForwardLogSoftmax(a))
    }

    pub fn smooth(&mut self, a: NodeId, eps: f64) -> NodeId {
        let av = self.value(a);
        let floor = (eps / av.ncols() as f64).ln();
        let keep = (1.0 - eps).ln();
        let v = av.mapv(|lp| log_add(keep + lp, floor));
        self.push(v, Op::Smooth(a, eps))
    }

    pub fn cols(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::Cols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = concatenate(Axis(1), &views).expect("equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn gather(&mut self, table: NodeId, rows: Vec<Option<usize>>) -> NodeId {
        let t = self.value(table);
        let mut v = Array2::zeros((rows.len(), t.ncols()));
        for (i, r) in rows.iter().enumerate() {
            if let Some(r) = *r {
                v.row_mut(i).assign(&t.row(r));
            }
        }
        self.push(v, Op::Gather(table, rows))
    }

    /// Path loss of the DAG with token log-probabilities `log_p` (`L x V`)
    /// and transition log-probabilities `log_e` (`L x L`). The gradient is
    /// computed analytically by the exact path DP at forward time.
    pub fn dag_loss(
        &mut self,
        log_p: NodeId,
        log_e: NodeId,
        target: &[usize],
        objective: Objective,
    ) -> Result<(NodeId, Dag), ModelError> {
        let dag = self.dag_of(log_p, log_e)?;
        let g = match objective {
            Objective::Sum => loss_grad(&dag, target)?,
            Objective::Max => loss_max_grad(&dag, target)?,
        };
        let (l, v) = (dag.graph_size(), dag.vocab_size());
        let d_log_p = Array2::from_shape_vec((l, v), g.d_log_token_probs).expect("shape");
        let d_log_e = Array2::from_shape_vec((l, l), g.d_log_transitions).expect("shape");
        let id = self.push(
            Array2::from_elem((1, 1), g.loss),
            Op::DagLoss {
                log_p,
                log_e,
                d_log_p,
                d_log_e,
            },
        );
        Ok((id, dag))
    }

    /// Unvalidated DAG view of two log-probability nodes.
    pub fn dag_of(&self, log_p: NodeId, log_e: NodeId) -> Result<Dag, ModelError> {
        let p = self.value(log_p);
        let e = self.value(log_e);
        Ok(Dag::from_log_probs_unchecked(
            p.nrows(),
            p.ncols(),
            p.iter().copied().collect(),
            e.iter().copied().collect(),
        )?)
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[[0, 0]]
    }

    /// Back-propagate from the scalar node `root`, scaled by `seed`, adding
    /// parameter gradients into `grads`.
    pub fn backward(&self, root: NodeId, seed: f64, grads: &mut Grads) {
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root] = Some(Array2::from_elem((1, 1), seed));
        for id in (0..=root).rev() {
            let Some(g) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Param(p) => *grads.get_mut(*p) += &g,
                Op::Const => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::MatMulBT(a, b) => {
                    let da = g.dot(&self.value(*b));
                    let db = g.t().dot(&self.value(*a));
                    acc(&mut adj, *a, da);
                    acc(&mut adj, *b, db);
                }
                Op::Add(a, b) => {
                    acc(&mut adj, *b, g.clone());
                    acc(&mut adj, *a, g);
                }
                Op::AddRow(a, row) => {
                    acc(&mut adj, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj, *a, g);
                }
                Op::Scale(a, f) => acc(&mut adj, *a, g * *f),
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&self.nodes[id].value)
                        .for_each(|d, &y| {
                            if y <= 0.0 {
                                *d = 0.0
                            }
                        });
                    acc(&mut adj, *a, d);
                }
                Op::Dropout(a, mask) => acc(&mut adj, *a, g * mask),
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    acc(&mut adj, *bias, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut adj, *gain, (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * &self.value(*gain);
                    let n = xhat.ncols() as f64;
                    let mut dx = Array2::zeros(g.raw_dim());
                    for (i, mut row) in dx.rows_mut().into_iter().enumerate() {
                        let dh = dxhat.row(i);
                        let xh = xhat.row(i);
                        let s1 = dh.sum();
                        let s2 = dh.dot(&xh);
                        let k = inv_std[i] / n;
                        Zip::from(&mut row)
                            .and(&dh)
                            .and(&xh)
                            .for_each(|o, &d, &h| *o = k * (n * d - s1 - h * s2));
                    }
                    acc(&mut adj, *x, dx);
                }
                Op::Softmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut d = g;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let dot = drow.dot(&yrow);
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &p| *d = p * (*d - dot));
                    }
                    acc(&mut adj, *a, d);
                }
                Op::LogSoftmax(a) | Op::ForwardLogSoftmax(a) => {
                    let y = &self.nodes[id].value;
                    let mut d = g;
                    for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                        let total: f64 = drow
                            .iter()
                            .zip(yrow.iter())
                            .filter(|(_, &lp)| lp > f64::NEG_INFINITY)
                            .map(|(d, _)| d)
                            .sum();
                        Zip::from(&mut drow).and(&yrow).for_each(|d, &lp| {
                            *d = if lp == f64::NEG_INFINITY {
                                0.0
                            } else {
                                *d - lp.exp() * total
                            }
                        });
                    }
                    acc(&mut adj, *a, d);
                }
                Op::Smooth(a, eps) => {
                    // d out / d lp = (1 - eps) p / p'.
                    let y = &self.nodes[id].value;
                    let mut d = g;
                    Zip::from(&mut d)
                        .and(&self.value(*a))
                        .and(y)
                        .for_each(|d, &lp, &lq| *d *= (1.0 - eps) * (lp - lq).exp());
                    acc(&mut adj, *a, d);
                }
                Op::Cols(a, start) => {
                    let src = self.value(*a);
                    let mut d = Array2::zeros(src.raw_dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut adj, *a, d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        acc(&mut adj, p, g.slice(s![.., at..at + w]).to_owned());
                        at += w;
                    }
                }
                Op::Gather(table, rows) => {
                    let t = self.value(*table);
                    let mut d = Array2::zeros(t.raw_dim());
                    for (i, r) in rows.iter().enumerate() {
                        if let Some(r) = *r {
                            let mut dst = d.row_mut(r);
                            dst += &g.row(i);
                        }
                    }
                    acc(&mut adj, *table, d);
                }
                Op::DagLoss {
                    log_p,
                    log_e,
                    d_log_p,
                    d_log_e,
                } => {
                    let s = g[[0, 0]];
                    acc(&mut adj, *log_p, d_log_p * s);
                    acc(&mut adj, *log_e, d_log_e * s);
                }
            }
        }
    }
}

fn acc(adj: &mut [Option<Array2<f64>>], id: NodeId, d: Array2<f64>) {
    match &mut adj[id] {
        Some(existing) => *existing += &d,
        slot => *slot = Some(d),
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    if lo == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

fn log_normalize(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z = row.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    for x in row {
        *x -= z;
    }
}
