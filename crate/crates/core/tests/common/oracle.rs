//! Brute-force reference implementations over explicit path enumeration.
//! Everything here works in linear space on plain nested vectors and shares no
//! code with the library beyond reading probabilities out of a `Dag`.

#![allow(dead_code)]

use std::collections::BTreeMap;

use dagnat_core::Dag;
use rand::Rng;

/// Linear-space copy of a DAG.
pub struct Lin {
    pub l: usize,
    pub v: usize,
    pub p: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
}

impl Lin {
    pub fn of(dag: &Dag) -> Self {
        let l = dag.graph_size();
        let v = dag.vocab_size();
        Self {
            l,
            v,
            p: (0..l).map(|u| (0..v).map(|w| dag.token_prob(u, w)).collect()).collect(),
            e: (0..l).map(|u| (0..l).map(|t| dag.transition(u, t)).collect()).collect(),
        }
    }
}

/// All vertex sequences `0 = a_1 < ... < a_M = L-1`, any length.
pub fn all_paths(l: usize) -> Vec<Vec<usize>> {
    if l == 1 {
        return vec![vec![0]];
    }
    let inner = l - 2;
    (0u32..1 << inner)
        .map(|mask| {
            let mut p = vec![0];
            p.extend((0..inner).filter(|b| mask >> b & 1 == 1).map(|b| b + 1));
            p.push(l - 1);
            p
        })
        .collect()
}

pub fn path_prob(g: &Lin, path: &[usize]) -> f64 {
    path.windows(2).map(|w| g.e[w[0]][w[1]]).product()
}

pub fn joint(g: &Lin, path: &[usize], y: &[usize]) -> f64 {
    path_prob(g, path) * path.iter().zip(y).map(|(&u, &t)| g.p[u][t]).product::<f64>()
}

pub fn paths_of_len(l: usize, m: usize) -> Vec<Vec<usize>> {
    all_paths(l).into_iter().filter(|p| p.len() == m).collect()
}

pub fn likelihood(g: &Lin, y: &[usize]) -> f64 {
    paths_of_len(g.l, y.len()).iter().map(|a| joint(g, a, y)).sum()
}

/// Most probable path; ties go to the lexicographically smallest vertex list.
pub fn best_path(g: &Lin, y: &[usize]) -> (Vec<usize>, f64) {
    let mut best = (Vec::new(), 0.0);
    for a in paths_of_len(g.l, y.len()) {
        let j = joint(g, &a, y);
        if j > best.1 {
            best = (a, j);
        }
    }
    best
}

/// `gamma[i][u]` by summing normalized path weights.
pub fn gamma(g: &Lin, y: &[usize]) -> Vec<Vec<f64>> {
    let z = likelihood(g, y);
    let mut out = vec![vec![0.0; g.l]; y.len()];
    for a in paths_of_len(g.l, y.len()) {
        let w = joint(g, &a, y) / z;
        for (i, &u) in a.iter().enumerate() {
            out[i][u] += w;
        }
    }
    out
}

/// `xi[i][v][u]`: posterior of the edge `v -> u` entering position `i`.
pub fn xi(g: &Lin, y: &[usize]) -> Vec<Vec<Vec<f64>>> {
    let z = likelihood(g, y);
    let mut out = vec![vec![vec![0.0; g.l]; g.l]; y.len()];
    for a in paths_of_len(g.l, y.len()) {
        let w = joint(g, &a, y) / z;
        for i in 1..a.len() {
            out[i][a[i - 1]][a[i]] += w;
        }
    }
    out
}

/// Probability that a walk visits each vertex.
pub fn passing(g: &Lin) -> Vec<f64> {
    let mut r = vec![0.0; g.l];
    for a in all_paths(g.l) {
        let p = path_prob(g, &a);
        for &u in &a {
            r[u] += p;
        }
    }
    r
}

/// Merged probability of every emitted string, summed over the paths and
/// token choices producing it.
pub fn translations(g: &Lin) -> BTreeMap<Vec<usize>, f64> {
    let mut out = BTreeMap::new();
    for a in all_paths(g.l) {
        let pp = path_prob(g, &a);
        if pp == 0.0 {
            continue;
        }
        let m = a.len();
        let mut idx = vec![0usize; m];
        loop {
            let p: f64 = pp * a.iter().zip(&idx).map(|(&u, &t)| g.p[u][t]).product::<f64>();
            if p > 0.0 {
                *out.entry(idx.clone()).or_insert(0.0) += p;
            }
            let mut k = 0;
            while k < m {
                idx[k] += 1;
                if idx[k] < g.v {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
        }
    }
    out
}

/// Which log-parameter a finite difference perturbs.
#[derive(Clone, Copy, Debug)]
pub enum Coord {
    Token(usize, usize),
    Edge(usize, usize),
}

/// Central difference of `-ln Z` in one log-parameter with step `h`.
///
/// Perturbing `ln P[u][w]` by `h` scales each path term by `e^{h c}` where
/// `c` counts its uses of the coordinate, so
/// `Z(h) - Z(-h) = sum_A z_A * 2 sinh(h c_A)` exactly. Evaluating the
/// difference that way avoids subtracting two nearly equal likelihoods.
pub fn central_difference(g: &Lin, y: &[usize], coord: Coord, h: f64) -> f64 {
    let mut z_minus = 0.0;
    let mut diff = 0.0;
    for a in paths_of_len(g.l, y.len()) {
        let za = joint(g, &a, y);
        if za == 0.0 {
            continue;
        }
        let c = match coord {
            Coord::Token(u, w) => a.iter().zip(y).filter(|&(&v, &t)| v == u && t == w).count(),
            Coord::Edge(v, u) => a.windows(2).filter(|s| s[0] == v && s[1] == u).count(),
        } as f64;
        z_minus += za * (-h * c).exp();
        diff += za * 2.0 * (h * c).sinh();
    }
    -(diff / z_minus).ln_1p() / (2.0 * h)
}

/// Random valid DAG with some exactly-zero entries.
pub fn random_dag<R: Rng>(rng: &mut R, l: usize, v: usize, zero_rate: f64) -> Dag {
    let row = |rng: &mut R, n: usize| -> Vec<f64> {
        let mut xs: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < zero_rate { 0.0 } else { rng.random::<f64>() + 0.01 })
            .collect();
        if xs.iter().all(|&x| x == 0.0) {
            let k = rng.random_range(0..n);
            xs[k] = 1.0;
        }
        let s: f64 = xs.iter().sum();
        xs.iter().map(|x| x / s).collect()
    };
    let p: Vec<Vec<f64>> = (0..l).map(|_| row(rng, v)).collect();
    let e: Vec<Vec<f64>> = (0..l)
        .map(|u| {
            let mut full = vec![0.0; l];
            if u + 1 < l {
                let tail = row(rng, l - u - 1);
                full[u + 1..].copy_from_slice(&tail);
            }
            full
        })
        .collect();
    Dag::from_probs(&p, &e).expect("generated DAG is valid")
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    if a == b {
        return true;
    }
    (a - b).abs() <= tol * a.abs().max(b.abs())
}
