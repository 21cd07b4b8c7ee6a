//! Exact dynamic programming over all paths of a [`Dag`].
//!
//! For a target `y_1..y_M`, a path is a strictly increasing vertex sequence
//! `1 = a_1 < ... < a_M = L` and
//! `P(Y, A) = prod_j P[a_j][y_j] * prod_{j>1} E[a_{j-1}][a_j]`.
//! The forward table `f[i][u]` holds the log of the summed probability of all
//! path prefixes emitting `y_1..y_i` and ending at `u`; the backward table
//! `b[i][u]` holds the same for suffixes starting after `u`. All recursions run
//! in log space in `O(M L^2)`.

use crate::dag::{Dag, Path};
use crate::{Error, Result};

/// A dense `rows x cols` table of `f64`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Table {
    fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[row * self.cols + col] = v;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// Forward and backward log tables for one `(dag, target)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct DpTables {
    /// `M x L` log prefix sums.
    pub f: Table,
    /// `M x L` log suffix sums.
    pub b: Table,
    /// `log P(Y)`, equal to `f[M][L]`.
    pub log_likelihood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginalLoss {
    pub loss: f64,
    pub tables: DpTables,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaxLoss {
    pub loss: f64,
    pub best_path: Path,
}

/// Posterior vertex and edge occupancy given the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// `gamma[i][u]`: posterior probability that target position `i` is
    /// emitted at vertex `u`.
    pub gamma: Table,
    /// `xi[i][v * L + u]`: posterior probability that positions `i-1, i` use
    /// the edge `v -> u`. Row 0 is all zeros.
    pub xi: Table,
}

/// Gradient of a path loss with respect to the log-parameters of the graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    /// `L x V`.
    pub d_log_token_probs: Vec<f64>,
    /// `L x L`.
    pub d_log_transitions: Vec<f64>,
}

/// Reject targets that cannot be placed on any path of the graph.
pub fn check_target(dag: &Dag, target: &[usize]) -> Result<()> {
    let m = target.len();
    let l = dag.graph_size();
    if m == 0 || m > l || (m == 1 && l > 1) {
        return Err(Error::Length { target: m, graph: l });
    }
    if let Some(&token) = target.iter().find(|&&t| t >= dag.vocab_size()) {
        return Err(Error::Vocab {
            token,
            vocab: dag.vocab_size(),
        });
    }
    Ok(())
}

fn forward_table(dag: &Dag, target: &[usize]) -> Table {
    let (m, l) = (target.len(), dag.graph_size());
    let mut f = Table::filled(m, l, f64::NEG_INFINITY);
    f.set(0, 0, dag.log_token_prob(0, target[0]));
    let mut terms = Vec::with_capacity(l);
    for i in 1..m {
        for u in i..l {
            terms.clear();
            terms.extend((i - 1..u).map(|v| f.get(i - 1, v) + dag.log_transition(v, u)));
            let acc = lse(&terms);
            if acc > f64::NEG_INFINITY {
                f.set(i, u, acc + dag.log_token_prob(u, target[i]));
            }
        }
    }
    f
}

fn backward_table(dag: &Dag, target: &[usize]) -> Table {
    let (m, l) = (target.len(), dag.graph_size());
    let mut b = Table::filled(m, l, f64::NEG_INFINITY);
    b.set(m - 1, l - 1, 0.0);
    let mut terms = Vec::with_capacity(l);
    for i in (0..m - 1).rev() {
        let next = target[i + 1];
        for u in 0..l - 1 {
            terms.clear();
            terms.extend(
                (u + 1..l).map(|w| dag.log_transition(u, w) + dag.log_token_prob(w, next) + b.get(i + 1, w)),
            );
            b.set(i, u, lse(&terms));
        }
    }
    b
}

#[inline]
fn lse(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY || max == f64::INFINITY {
        return max;
    }
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// The suffix table `b`, with `b[M][L] = 0` and
/// `b[i][u] = log sum_{w>u} E[u][w] P[w][y_{i+1}] exp(b[i+1][w])`.
pub fn backward_dp(dag: &Dag, target: &[usize]) -> Result<Table> {
    check_target(dag, target)?;
    Ok(backward_table(dag, target))
}

/// Negative log of the probability of `target` summed over every path.
pub fn loss_marginal(dag: &Dag, target: &[usize]) -> Result<MarginalLoss> {
    check_target(dag, target)?;
    let f = forward_table(dag, target);
    let b = backward_table(dag, target);
    let log_likelihood = f.get(target.len() - 1, dag.graph_size() - 1);
    if log_likelihood == f64::NEG_INFINITY {
        return Err(Error::Degenerate);
    }
    Ok(MarginalLoss {
        loss: -log_likelihood,
        tables: DpTables { f, b, log_likelihood },
    })
}

/// Negative log probability of the single most probable path, with that path.
/// Ties go to the smallest predecessor vertex.
pub fn loss_max(dag: &Dag, target: &[usize]) -> Result<MaxLoss> {
    check_target(dag, target)?;
    let (m, l) = (target.len(), dag.graph_size());
    let mut g = Table::filled(m, l, f64::NEG_INFINITY);
    let mut back = vec![0usize; m * l];
    g.set(0, 0, dag.log_token_prob(0, target[0]));
    for i in 1..m {
        for u in i..l {
            let mut best = f64::NEG_INFINITY;
            let mut arg = i - 1;
            for v in i - 1..u {
                let s = g.get(i - 1, v) + dag.log_transition(v, u);
                if s > best {
                    best = s;
                    arg = v;
                }
            }
            if best > f64::NEG_INFINITY {
                g.set(i, u, best + dag.log_token_prob(u, target[i]));
                back[i * l + u] = arg;
            }
        }
    }
    let best = g.get(m - 1, l - 1);
    if best == f64::NEG_INFINITY {
        return Err(Error::Degenerate);
    }
    let mut vertices = vec![0; m];
    let mut u = l - 1;
    for i in (0..m).rev() {
        vertices[i] = u;
        if i > 0 {
            u = back[i * l + u];
        }
    }
    Ok(MaxLoss {
        loss: -best,
        best_path: Path::new(vertices, l)?,
    })
}

/// Vertex and edge posteriors `gamma` and `xi`.
pub fn posteriors(dag: &Dag, target: &[usize]) -> Result<Posteriors> {
    let MarginalLoss { tables, .. } = loss_marginal(dag, target)?;
    let (m, l) = (target.len(), dag.graph_size());
    let ll = tables.log_likelihood;
    let mut gamma = Table::filled(m, l, 0.0);
    for i in 0..m {
        for u in 0..l {
            gamma.set(i, u, (tables.f.get(i, u) + tables.b.get(i, u) - ll).exp());
        }
    }
    let mut xi = Table::filled(m, l * l, 0.0);
    for i in 1..m {
        for u in 1..l {
            let tail = dag.log_token_prob(u, target[i]) + tables.b.get(i, u) - ll;
            if tail == f64::NEG_INFINITY {
                continue;
            }
            for v in 0..u {
                let s = tables.f.get(i - 1, v) + dag.log_transition(v, u) + tail;
                xi.set(i, v * l + u, s.exp());
            }
        }
    }
    Ok(Posteriors { gamma, xi })
}

/// Marginal loss and its gradient with respect to `log P` and `log E`:
/// `dL/dlogP[u][w] = -sum_i gamma(i,u) [y_i = w]` and
/// `dL/dlogE[v][u] = -sum_i xi(i, v->u)`.
pub fn loss_grad(dag: &Dag, target: &[usize]) -> Result<LossGrad> {
    let MarginalLoss { loss, tables } = loss_marginal(dag, target)?;
    let (m, l, vocab) = (target.len(), dag.graph_size(), dag.vocab_size());
    let ll = tables.log_likelihood;
    let mut d_p = vec![0.0; l * vocab];
    let mut d_e = vec![0.0; l * l];
    for (i, &y) in target.iter().enumerate() {
        for u in 0..l {
            let post = tables.f.get(i, u) + tables.b.get(i, u) - ll;
            if post > f64::NEG_INFINITY {
                d_p[u * vocab + y] -= post.exp();
            }
        }
    }
    for i in 1..m {
        for u in 1..l {
            let tail = dag.log_token_prob(u, target[i]) + tables.b.get(i, u) - ll;
            if tail == f64::NEG_INFINITY {
                continue;
            }
            for v in 0..u {
                let s = tables.f.get(i - 1, v) + dag.log_transition(v, u) + tail;
                if s > f64::NEG_INFINITY {
                    d_e[v * l + u] -= s.exp();
                }
            }
        }
    }
    Ok(LossGrad {
        loss,
        d_log_token_probs: d_p,
        d_log_transitions: d_e,
    })
}

/// Max-path loss and its (sub)gradient: every factor on the best path gets -1.
pub fn loss_max_grad(dag: &Dag, target: &[usize]) -> Result<LossGrad> {
    let MaxLoss { loss, best_path } = loss_max(dag, target)?;
    let (l, vocab) = (dag.graph_size(), dag.vocab_size());
    let mut d_p = vec![0.0; l * vocab];
    let mut d_e = vec![0.0; l * l];
    let path = best_path.vertices();
    for (i, (&u, &y)) in path.iter().zip(target).enumerate() {
        d_p[u * vocab + y] -= 1.0;
        if i > 0 {
            d_e[path[i - 1] * l + u] -= 1.0;
        }
    }
    Ok(LossGrad {
        loss,
        d_log_token_probs: d_p,
        d_log_transitions: d_e,
    })
}
