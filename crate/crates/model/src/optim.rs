//! AdamW with decoupled weight decay.

use ndarray::{Array2, Zip};

use crate::params::{Grads, ParamStore};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.98;
pub const EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub m: Vec<Array2<f64>>,
    pub v: Vec<Array2<f64>>,
    /// Updates applied so far.
    pub t: u64,
}

/// Biases, normalization gains and embeddings are not decayed.
pub fn decays(name: &str) -> bool {
    !(name.contains(".b") || name.contains("norm") || name.ends_with("_emb") || name.ends_with("_pos"))
}

impl AdamW {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || params.values().iter().map(|v| Array2::zeros(v.raw_dim())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &Grads, lr: f64, weight_decay: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let wd = if decays(params.name(i)) { weight_decay } else { 0.0 };
            Zip::from(params.value_mut(i))
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(grads.get(i))
                .for_each(|p, m, v, &g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    let step = (*m / c1) / ((*v / c2).sqrt() + EPS);
                    *p -= lr * (step + wd * *p);
                });
        }
    }
}
