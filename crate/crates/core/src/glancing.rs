//! Glancing inputs on the graph: place the target on its most probable path,
//! then reveal a subset of the placed tokens as extra decoder input.

use rand::seq::index::sample;
use rand::Rng;

use crate::dag::{Dag, Path};
use crate::dp::loss_max;
use crate::logspace::argmax;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskVariant {
    /// Nothing revealed (vanilla training).
    AllMasked,
    /// Reveal `round(rho * M)` tokens with `rho ~ U[0, 1]`.
    Uniform,
    /// Reveal `round(tau * mismatches)` tokens.
    Adaptive,
}

impl std::str::FromStr for MaskVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" | "all_masked" | "all-masked" => Ok(Self::AllMasked),
            "uniform" => Ok(Self::Uniform),
            "adaptive" => Ok(Self::Adaptive),
            other => Err(Error::Config(format!("unknown glancing strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskStrategy {
    pub variant: MaskVariant,
    /// Only used by [`MaskVariant::Adaptive`].
    pub tau: f64,
}

impl MaskStrategy {
    pub fn new(variant: MaskVariant, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau must lie in [0, 1], got {tau}")));
        }
        Ok(Self { variant, tau })
    }

    pub fn all_masked() -> Self {
        Self {
            variant: MaskVariant::AllMasked,
            tau: 0.0,
        }
    }
}

/// Extra decoder input of length `L`. `None` is the mask (zero embedding).
#[derive(Debug, Clone, PartialEq)]
pub struct GlancingInput {
    pub z: Vec<Option<usize>>,
    pub revealed_count: usize,
    /// Path used to place target tokens; absent when nothing is placed.
    pub assignment: Option<Path>,
}

impl GlancingInput {
    pub fn all_masked(graph_size: usize) -> Self {
        Self {
            z: vec![None; graph_size],
            revealed_count: 0,
            assignment: None,
        }
    }
}

/// Most probable path for the target.
pub fn assign_targets(dag: &Dag, target: &[usize]) -> Result<Path> {
    Ok(loss_max(dag, target)?.best_path)
}

/// `round_half_up(tau * #{i : y_i != yhat_i})`, clamped to `M`.
pub fn reveal_count(target: &[usize], predicted: &[usize], tau: f64) -> usize {
    debug_assert_eq!(target.len(), predicted.len());
    let mismatches = target.iter().zip(predicted).filter(|(a, b)| a != b).count();
    round_half_up(tau * mismatches as f64).min(target.len())
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5).floor().max(0.0) as usize
}

pub fn build_glancing_input<R: Rng + ?Sized>(
    dag: &Dag,
    target: &[usize],
    strategy: MaskStrategy,
    rng: &mut R,
) -> Result<GlancingInput> {
    let l = dag.graph_size();
    if strategy.variant == MaskVariant::AllMasked {
        return Ok(GlancingInput::all_masked(l));
    }
    let path = assign_targets(dag, target)?;
    let m = target.len();
    let t = match strategy.variant {
        MaskVariant::Adaptive => {
            let predicted: Vec<usize> = path
                .vertices()
                .iter()
                .map(|&u| argmax(dag.log_token_row(u)))
                .collect();
            reveal_count(target, &predicted, strategy.tau)
        }
        MaskVariant::Uniform => {
            let rho: f64 = rng.random();
            round_half_up(rho * m as f64).min(m)
        }
        MaskVariant::AllMasked => unreachable!(),
    };
    let mut z = vec![None; l];
    if t > 0 {
        for pos in sample(rng, m, t).into_iter() {
            z[path.vertices()[pos]] = Some(target[pos]);
        }
    }
    Ok(GlancingInput {
        z,
        revealed_count: t,
        assignment: Some(path),
    })
}

/// Linear interpolation from `tau_start` at step 0 to `tau_end` at `total_steps`.
pub fn anneal_tau(step: usize, total_steps: usize, tau_start: f64, tau_end: f64) -> f64 {
    let frac = step.min(total_steps) as f64 / total_steps.max(1) as f64;
    tau_start + (tau_end - tau_start) * frac
}
