//! The DAG data model: validation, passing probabilities, pruning for export
//! and structural statistics.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::json;

use crate::logspace::{argmax, ln_or_neg_inf};
use crate::{Error, Result};

/// Row sums must be within this distance of 1.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// Slack used when comparing accumulated probability mass against a threshold.
const MASS_SLACK: f64 = 1e-9;

/// A decoded graph: `L` vertices with token distributions and a strictly
/// upper-triangular transition matrix, both stored as natural logs.
///
/// Row `L` of the transition matrix is all zero mass (`-inf`): the terminal
/// vertex has no outgoing edges.
#[derive(Debug, Clone, PartialEq)]
pub struct Dag {
    graph_size: usize,
    vocab_size: usize,
    /// `L x V`, row-major.
    log_token_probs: Vec<f64>,
    /// `L x L`, row-major.
    log_transitions: Vec<f64>,
}

impl Dag {
    /// Build from linear-space probabilities and validate.
    pub fn from_probs(token_probs: &[Vec<f64>], transitions: &[Vec<f64>]) -> Result<Self> {
        let graph_size = token_probs.len();
        let vocab_size = token_probs.first().map_or(0, Vec::len);
        if token_probs.iter().any(|r| r.len() != vocab_size) {
            return Err(Error::Shape("token_probs rows have unequal lengths".into()));
        }
        if transitions.len() != graph_size || transitions.iter().any(|r| r.len() != graph_size) {
            return Err(Error::Shape(format!(
                "transitions must be {graph_size}x{graph_size}"
            )));
        }
        let log_p = token_probs.iter().flatten().map(|&p| ln_or_neg_inf(p)).collect();
        let log_e = transitions.iter().flatten().map(|&p| ln_or_neg_inf(p)).collect();
        Self::from_log_probs(graph_size, vocab_size, log_p, log_e)
    }

    /// Build from log-space row-major buffers and validate.
    pub fn from_log_probs(
        graph_size: usize,
        vocab_size: usize,
        log_token_probs: Vec<f64>,
        log_transitions: Vec<f64>,
    ) -> Result<Self> {
        let dag = Self::from_log_probs_unchecked(graph_size, vocab_size, log_token_probs, log_transitions)?;
        dag.validate()?;
        Ok(dag)
    }

    /// Build without checking normalization or triangularity. Shapes are still
    /// checked. Useful for raw, unnormalized parameters in gradient checks.
    pub fn from_log_probs_unchecked(
        graph_size: usize,
        vocab_size: usize,
        log_token_probs: Vec<f64>,
        log_transitions: Vec<f64>,
    ) -> Result<Self> {
        if graph_size == 0 {
            return Err(Error::Shape("graph size must be at least 1".into()));
        }
        if vocab_size < 2 {
            return Err(Error::Shape("vocabulary size must be at least 2".into()));
        }
        if log_token_probs.len() != graph_size * vocab_size {
            return Err(Error::Shape(format!(
                "token_probs has {} entries, expected {}",
                log_token_probs.len(),
                graph_size * vocab_size
            )));
        }
        if log_transitions.len() != graph_size * graph_size {
            return Err(Error::Shape(format!(
                "transitions has {} entries, expected {}",
                log_transitions.len(),
                graph_size * graph_size
            )));
        }
        Ok(Self {
            graph_size,
            vocab_size,
            log_token_probs,
            log_transitions,
        })
    }

    /// Check every structural and normalization invariant.
    pub fn validate(&self) -> Result<()> {
        let l = self.graph_size;
        for from in 0..l {
            for to in 0..=from {
                let lp = self.log_transition(from, to);
                if lp > f64::NEG_INFINITY || lp.is_nan() {
                    return Err(Error::Structure {
                        from: from + 1,
                        to: to + 1,
                        mass: lp.exp(),
                    });
                }
            }
        }
        for u in 0..l {
            let sum: f64 = self.log_token_row(u).iter().map(|x| x.exp()).sum();
            if !((sum - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::Normalization {
                    matrix: "token_probs",
                    row: u + 1,
                    sum,
                });
            }
        }
        for u in 0..l.saturating_sub(1) {
            let sum: f64 = self.log_transition_row(u).iter().map(|x| x.exp()).sum();
            if !((sum - 1.0).abs() <= NORM_TOLERANCE) {
                return Err(Error::Normalization {
                    matrix: "transitions",
                    row: u + 1,
                    sum,
                });
            }
        }
        Ok(())
    }

    pub fn graph_size(&self) -> usize {
        self.graph_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    #[inline]
    pub fn log_token_prob(&self, vertex: usize, token: usize) -> f64 {
        self.log_token_probs[vertex * self.vocab_size + token]
    }

    #[inline]
    pub fn log_transition(&self, from: usize, to: usize) -> f64 {
        self.log_transitions[from * self.graph_size + to]
    }

    pub fn token_prob(&self, vertex: usize, token: usize) -> f64 {
        self.log_token_prob(vertex, token).exp()
    }

    pub fn transition(&self, from: usize, to: usize) -> f64 {
        self.log_transition(from, to).exp()
    }

    pub fn log_token_row(&self, vertex: usize) -> &[f64] {
        &self.log_token_probs[vertex * self.vocab_size..(vertex + 1) * self.vocab_size]
    }

    pub fn log_transition_row(&self, from: usize) -> &[f64] {
        &self.log_transitions[from * self.graph_size..(from + 1) * self.graph_size]
    }

    pub fn log_token_probs(&self) -> &[f64] {
        &self.log_token_probs
    }

    pub fn log_transitions(&self) -> &[f64] {
        &self.log_transitions
    }

    /// Most probable token at every vertex (ties to the smallest index).
    pub fn argmax_tokens(&self) -> Vec<usize> {
        (0..self.graph_size).map(|u| argmax(self.log_token_row(u))).collect()
    }

    /// Probability of the most probable token at every vertex.
    pub fn max_token_probs(&self) -> Vec<f64> {
        (0..self.graph_size)
            .map(|u| {
                self.log_token_row(u)
                    .iter()
                    .fold(f64::NEG_INFINITY, |a, &b| a.max(b))
                    .exp()
            })
            .collect()
    }

    /// Probability that a random walk from vertex 1 under the transition
    /// matrix visits each vertex.
    pub fn passing_probs(&self) -> Vec<f64> {
        let l = self.graph_size;
        let mut r = vec![0.0; l];
        r[0] = 1.0;
        for u in 1..l {
            r[u] = (0..u).map(|v| r[v] * self.transition(v, u)).sum();
        }
        r
    }

    /// Unpruned view of the whole graph.
    pub fn full_view(&self) -> PrunedDag {
        let l = self.graph_size;
        let mut edges = Vec::new();
        for from in 0..l {
            for to in from + 1..l {
                let p = self.transition(from, to);
                if p > 0.0 {
                    edges.push(Edge { from, to, p });
                }
            }
        }
        PrunedDag {
            graph_size: l,
            vertices: (0..l).collect(),
            passing: self.passing_probs(),
            edges,
        }
    }

    /// Drop rarely visited vertices and low-mass edges for display.
    ///
    /// Vertices with passing probability below `min_passing` are removed
    /// (vertices 1 and `L` are always kept). For each remaining vertex, the
    /// outgoing edges to remaining vertices are sorted by probability and the
    /// shortest prefix whose cumulative mass reaches `edge_mass` is kept.
    pub fn prune_for_export(&self, min_passing: f64, edge_mass: f64) -> PrunedDag {
        self.full_view().prune(min_passing, edge_mass)
    }

    pub fn dag_stats(&self, passing_floor: f64, edge_mass: f64, merge_same_token: bool) -> DagStats {
        let l = self.graph_size;
        let passing = self.passing_probs();
        let tokens = self.argmax_tokens();
        let mut hist: Vec<usize> = Vec::new();
        for (u, &r) in passing.iter().enumerate() {
            if r < passing_floor - MASS_SLACK {
                continue;
            }
            let mut groups: Vec<(usize, f64)> = Vec::new();
            if merge_same_token {
                let mut by_token: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
                for to in u + 1..l {
                    let p = self.transition(u, to);
                    if p > 0.0 {
                        let entry = by_token.entry(tokens[to]).or_insert((to, 0.0));
                        entry.1 += p;
                    }
                }
                groups.extend(by_token.into_values());
            } else {
                groups.extend(
                    (u + 1..l)
                        .map(|to| (to, self.transition(u, to)))
                        .filter(|&(_, p)| p > 0.0),
                );
            }
            let degree = top_mass(groups, edge_mass).len();
            if hist.len() <= degree {
                hist.resize(degree + 1, 0);
            }
            hist[degree] += 1;
        }
        DagStats {
            passing_probs: passing,
            max_token_probs: self.max_token_probs(),
            out_degree_hist: hist,
        }
    }
}

/// Keep the most probable `(target, p)` entries until the cumulative mass
/// reaches `mass`. Ties go to the smaller target index.
fn top_mass(mut entries: Vec<(usize, f64)>, mass: f64) -> Vec<(usize, f64)> {
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    if mass >= 1.0 {
        return entries;
    }
    let mut kept = Vec::new();
    let mut acc = 0.0;
    for e in entries {
        if acc >= mass - MASS_SLACK {
            break;
        }
        acc += e.1;
        kept.push(e);
    }
    kept
}

/// A strictly increasing vertex sequence from vertex 1 to vertex `L` (0-based
/// internally).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Path(Vec<usize>);

impl Path {
    pub fn new(vertices: Vec<usize>, graph_size: usize) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidPath("empty".into()));
        }
        if vertices[0] != 0 {
            return Err(Error::InvalidPath("must start at vertex 1".into()));
        }
        if *vertices.last().unwrap() + 1 != graph_size {
            return Err(Error::InvalidPath(format!("must end at vertex {graph_size}")));
        }
        if vertices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidPath("vertices must be strictly increasing".into()));
        }
        Ok(Self(vertices))
    }

    pub fn vertices(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// 1-based vertex indices, for display.
    pub fn one_based(&self) -> Vec<usize> {
        self.0.iter().map(|v| v + 1).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DagStats {
    pub passing_probs: Vec<f64>,
    pub max_token_probs: Vec<f64>,
    /// `out_degree_hist[k]` is the number of counted vertices keeping `k` edges.
    pub out_degree_hist: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub from: usize,
    pub to: usize,
    pub p: f64,
}

/// A subgraph selected for display. Passing probabilities are those of the
/// original graph.
#[derive(Debug, Clone, PartialEq)]
pub struct PrunedDag {
    pub graph_size: usize,
    /// Kept vertices, ascending.
    pub vertices: Vec<usize>,
    /// Passing probability of every vertex of the original graph.
    pub passing: Vec<f64>,
    pub edges: Vec<Edge>,
}

impl PrunedDag {
    /// Prune this view further. Pruning is idempotent.
    pub fn prune(&self, min_passing: f64, edge_mass: f64) -> PrunedDag {
        let last = self.graph_size - 1;
        let vertices: Vec<usize> = self
            .vertices
            .iter()
            .copied()
            .filter(|&u| u == 0 || u == last || self.passing[u] >= min_passing)
            .collect();
        let mut keep = vec![false; self.graph_size];
        for &u in &vertices {
            keep[u] = true;
        }
        let mut edges = Vec::new();
        for &from in &vertices {
            let out: Vec<(usize, f64)> = self
                .edges
                .iter()
                .filter(|e| e.from == from && keep[e.to])
                .map(|e| (e.to, e.p))
                .collect();
            let mut kept = top_mass(out, edge_mass);
            kept.sort_by_key(|&(to, _)| to);
            edges.extend(kept.into_iter().map(|(to, p)| Edge { from, to, p }));
        }
        PrunedDag {
            graph_size: self.graph_size,
            vertices,
            passing: self.passing.clone(),
            edges,
        }
    }

    /// JSON export: `{"L", "vocab", "vertices": [{"id", "passing",
    /// "top_tokens": [{"token", "p"}]}], "edges": [{"from", "to", "p"}]}` with
    /// 1-based vertex ids.
    pub fn to_json(&self, dag: &Dag, vocab: &[String], top_k: usize) -> serde_json::Value {
        let vertices: Vec<_> = self
            .vertices
            .iter()
            .map(|&u| {
                let top: Vec<_> = top_tokens(dag, u, top_k)
                    .into_iter()
                    .map(|(t, p)| json!({"token": token_name(vocab, t), "p": p}))
                    .collect();
                json!({"id": u + 1, "passing": self.passing[u], "top_tokens": top})
            })
            .collect();
        let edges: Vec<_> = self
            .edges
            .iter()
            .map(|e| json!({"from": e.from + 1, "to": e.to + 1, "p": e.p}))
            .collect();
        json!({
            "L": self.graph_size,
            "vocab": vocab,
            "vertices": vertices,
            "edges": edges,
        })
    }

    /// Graphviz rendering. Vertex labels list the top-k tokens, edge labels
    /// the transition probability to two decimals.
    pub fn to_dot(&self, dag: &Dag, vocab: &[String], top_k: usize) -> String {
        let mut out = String::from("digraph dag {\n  rankdir=LR;\n  node [shape=box, fontname=\"monospace\"];\n");
        for &u in &self.vertices {
            let mut label = format!("v{} (pass {:.2})", u + 1, self.passing[u]);
            for (t, p) in top_tokens(dag, u, top_k) {
                let _ = write!(label, "\\n{} {:.2}", escape_dot(&token_name(vocab, t)), p);
            }
            let _ = writeln!(out, "  v{} [label=\"{}\"];", u + 1, label);
        }
        for e in &self.edges {
            let _ = writeln!(out, "  v{} -> v{} [label=\"{:.2}\"];", e.from + 1, e.to + 1, e.p);
        }
        out.push_str("}\n");
        out
    }
}

fn top_tokens(dag: &Dag, vertex: usize, k: usize) -> Vec<(usize, f64)> {
    let mut toks: Vec<(usize, f64)> = dag
        .log_token_row(vertex)
        .iter()
        .enumerate()
        .map(|(t, &lp)| (t, lp.exp()))
        .collect();
    toks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    toks.truncate(k);
    toks
}

fn token_name(vocab: &[String], t: usize) -> String {
    vocab.get(t).cloned().unwrap_or_else(|| format!("#{t}"))
}

fn escape_dot(s: &str) -> String {
    s.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Small hand-checkable graphs.
pub mod fixtures {
    use super::Dag;

    /// Four vertices over the vocabulary `(a, b, end)`.
    ///
    /// Transitions: 1->2 .5, 1->3 .3, 1->4 .2, 2->3 .55, 2->4 .45, 3->4 1.
    pub fn d1() -> Dag {
        let p = vec![
            vec![0.9, 0.05, 0.05],
            vec![0.2, 0.7, 0.1],
            vec![0.3, 0.6, 0.1],
            vec![0.05, 0.05, 0.9],
        ];
        let e = vec![
            vec![0.0, 0.5, 0.3, 0.2],
            vec![0.0, 0.0, 0.55, 0.45],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
        ];
        Dag::from_probs(&p, &e).expect("fixture is valid")
    }

    pub const A: usize = 0;
    pub const B: usize = 1;
    pub const END: usize = 2;

    /// A chain `1 -> 2 -> ... -> L` with the given token distributions.
    pub fn chain(token_probs: &[Vec<f64>]) -> Dag {
        let l = token_probs.len();
        let mut e = vec![vec![0.0; l]; l];
        for (i, row) in e.iter_mut().enumerate().take(l.saturating_sub(1)) {
            row[i + 1] = 1.0;
        }
        Dag::from_probs(token_probs, &e).expect("chain is valid")
    }
}
