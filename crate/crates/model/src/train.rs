//! Glancing training loop, batching and evaluation helpers.
//!
//! Each sample is processed on its own tape and gradients are summed in batch
//! order, so results do not depend on how samples are grouped. All randomness
//! of step `s` (dropout, glancing positions) comes from a generator derived
//! from `(seed, s)`, which makes resumed runs identical to uninterrupted ones.

use dagnat_core::data::{RefGroup, PAD};
use dagnat_core::decoding::decode_lookahead;
use dagnat_core::dp::posteriors;
use dagnat_core::glancing::{anneal_tau, build_glancing_input, GlancingInput, MaskStrategy, MaskVariant};
use dagnat_core::metrics::{exact_match, multi_ref_bleu};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::network::{DropoutRng, Model};
use crate::optim::AdamW;
use crate::params::Grads;
use crate::tape::{Objective, Tape};
use crate::ModelError;

/// Generator for everything random inside optimizer step `step`.
pub fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64 + 1);
    rng
}

/// Loss of one sample, with gradients added into `grads` scaled by `weight`
/// when given.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss(
    model: &Model,
    source: &[usize],
    target: &[usize],
    glancing: Option<&GlancingInput>,
    objective: Objective,
    label_smoothing: f64,
    rng: DropoutRng,
    grads: Option<(&mut Grads, f64)>,
) -> Result<f64, ModelError> {
    let mut rng = rng;
    let mut t = Tape::new(&model.params);
    let enc = model.encode_on(&mut t, source, rng.as_deref_mut())?;
    let l = model.graph_size(source.len());
    let g = model.decode_on(&mut t, enc, l, glancing.map(|g| g.z.as_slice()), rng)?;
    let log_p = if label_smoothing > 0.0 {
        t.smooth(g.log_p, label_smoothing)
    } else {
        g.log_p
    };
    let (loss, _) = t.dag_loss(log_p, g.log_e, target, objective)?;
    let value = t.scalar(loss);
    if let Some((grads, weight)) = grads {
        t.backward(loss, weight, grads);
    }
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    /// Optimizer step just completed (1-based).
    pub step: usize,
    /// Mean loss over the samples used.
    pub loss: f64,
    pub used: usize,
    /// Samples whose target is longer than their graph.
    pub skipped: usize,
    pub revealed: usize,
    pub lr: f64,
    pub grad_norm: f64,
}

pub struct Trainer {
    pub model: Model,
    pub cfg: TrainConfig,
    pub opt: AdamW,
    /// Completed optimizer steps.
    pub step: usize,
    grads: Grads,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self, ModelError> {
        let opt = AdamW::new(&model.params);
        Self::resume(model, cfg, 0, opt)
    }

    pub fn resume(model: Model, cfg: TrainConfig, step: usize, opt: AdamW) -> Result<Self, ModelError> {
        cfg.validate()?;
        let grads = Grads::zeros_like(&model.params);
        Ok(Self {
            model,
            cfg,
            opt,
            step,
            grads,
        })
    }

    pub fn tau(&self) -> f64 {
        anneal_tau(self.step, self.cfg.steps, self.cfg.tau_start, self.cfg.tau_end)
    }

    fn strategy(&self) -> Result<MaskStrategy, ModelError> {
        Ok(MaskStrategy::new(self.cfg.glancing, self.tau().clamp(0.0, 1.0))?)
    }

    /// One optimizer update on `(source, target)` pairs.
    pub fn train_step(&mut self, batch: &[(&[usize], &[usize])]) -> Result<StepStats, ModelError> {
        let mut rng = step_rng(self.cfg.seed, self.step);
        let strategy = self.strategy()?;
        self.grads.fill_zero();
        let usable: Vec<&(&[usize], &[usize])> = batch
            .iter()
            .filter(|(s, t)| t.len() <= self.model.graph_size(s.len()))
            .collect();
        let skipped = batch.len() - usable.len();
        if skipped > 0 {
            log::warn!("step {}: skipped {skipped} samples longer than their graph", self.step + 1);
        }
        let weight = if usable.is_empty() { 0.0 } else { 1.0 / usable.len() as f64 };
        let mut total = 0.0;
        let mut revealed = 0;
        for (src, tgt) in usable.iter().copied() {
            let glance = if strategy.variant == MaskVariant::AllMasked {
                None
            } else {
                // First pass: all-masked graph, no gradient, no dropout.
                let dag = self.model.dag_for_source(src, None)?;
                let g = build_glancing_input(&dag, tgt, strategy, &mut rng)?;
                revealed += g.revealed_count;
                Some(g)
            };
            total += sample_loss(
                &self.model,
                src,
                tgt,
                glance.as_ref(),
                self.cfg.objective,
                self.cfg.label_smoothing,
                Some(&mut rng),
                Some((&mut self.grads, weight)),
            )?;
        }
        let grad_norm = self.grads.norm();
        if self.cfg.clip_norm > 0.0 && grad_norm > self.cfg.clip_norm {
            self.grads.scale(self.cfg.clip_norm / grad_norm);
        }
        self.step += 1;
        let lr = self.cfg.learning_rate(self.step);
        if !usable.is_empty() {
            self.opt
                .update(&mut self.model.params, &self.grads, lr, self.cfg.weight_decay);
        }
        Ok(StepStats {
            step: self.step,
            loss: total * weight,
            used: usable.len(),
            skipped,
            revealed,
            lr,
            grad_norm,
        })
    }
}

/// Endless sequence of batches over reference groups. Every epoch visits each
/// source once, in an order shuffled by `(seed, epoch)`, paired with one
/// uniformly drawn reference. Batches are cut when their target tokens reach
/// `batch_tokens`.
#[derive(Debug, Clone)]
pub struct BatchStream<'a> {
    groups: &'a [RefGroup<usize>],
    batch_tokens: usize,
    seed: u64,
    epoch: u64,
    pending: std::collections::VecDeque<Vec<(usize, usize)>>,
}

impl<'a> BatchStream<'a> {
    pub fn new(groups: &'a [RefGroup<usize>], batch_tokens: usize, seed: u64) -> Self {
        Self {
            groups,
            batch_tokens,
            seed,
            epoch: 0,
            pending: Default::default(),
        }
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn refill(&mut self) {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_0000_0000);
        rng.set_stream(self.epoch);
        self.epoch += 1;
        let mut order: Vec<usize> = (0..self.groups.len()).collect();
        order.shuffle(&mut rng);
        let mut batch = Vec::new();
        let mut tokens = 0;
        for g in order {
            let r = rng.random_range(0..self.groups[g].references.len());
            tokens += self.groups[g].references[r].len();
            batch.push((g, r));
            if tokens >= self.batch_tokens {
                self.pending.push_back(std::mem::take(&mut batch));
                tokens = 0;
            }
        }
        if !batch.is_empty() {
            self.pending.push_back(batch);
        }
    }

    /// Next batch as `(source, target)` slices.
    pub fn next_batch(&mut self) -> Vec<(&'a [usize], &'a [usize])> {
        if self.pending.is_empty() {
            self.refill();
        }
        let groups = self.groups;
        self.pending
            .pop_front()
            .expect("refill produces at least one batch")
            .into_iter()
            .map(|(g, r)| (groups[g].source.as_slice(), groups[g].references[r].as_slice()))
            .collect()
    }

    /// Skip `n` batches, e.g. when resuming.
    pub fn skip(&mut self, n: usize) {
        for _ in 0..n {
            let _ = self.next_batch();
        }
    }
}

/// Remove reserved tokens (mask, sentence markers, padding).
pub fn strip_special(tokens: &[usize]) -> Vec<usize> {
    tokens.iter().copied().filter(|&t| t > PAD).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub exact_match: f64,
    pub bleu: f64,
    pub hypotheses: Vec<Vec<usize>>,
}

/// Lookahead-decode every source and score against its reference set.
pub fn evaluate_lookahead(model: &Model, groups: &[RefGroup<usize>]) -> Result<EvalReport, ModelError> {
    let mut hyps = Vec::with_capacity(groups.len());
    for g in groups {
        let dag = model.dag_for_source(&g.source, None)?;
        hyps.push(strip_special(&decode_lookahead(&dag)));
    }
    let refs: Vec<Vec<Vec<usize>>> = groups
        .iter()
        .map(|g| g.references.iter().map(|r| strip_special(r)).collect())
        .collect();
    Ok(EvalReport {
        exact_match: exact_match(&hyps, &refs)?,
        bleu: multi_ref_bleu(&hyps, &refs, false)?.score,
        hypotheses: hyps,
    })
}

/// Mean entropy (nats) of the vertex posterior `gamma(i, .)` over all target
/// positions of the given pairs, with all-masked decoder input.
pub fn mean_posterior_entropy(model: &Model, pairs: &[(&[usize], &[usize])]) -> Result<f64, ModelError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (src, tgt) in pairs {
        let dag = model.dag_for_source(src, None)?;
        let post = posteriors(&dag, tgt)?;
        for i in 0..tgt.len() {
            sum -= post
                .gamma
                .row(i)
                .iter()
                .filter(|&&p| p > 0.0)
                .map(|&p| p * p.ln())
                .sum::<f64>();
            count += 1;
        }
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}
