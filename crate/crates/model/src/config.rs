//! Model and training configuration with a flat `key=value` text form.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use dagnat_core::glancing::MaskVariant;

use crate::tape::Objective;
use crate::ModelError;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model_dim: usize,
    pub num_heads: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub ffn_dim: usize,
    pub vocab_size: usize,
    /// Graph size multiplier: `L = lambda * N`.
    pub lambda: usize,
    pub max_source_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            model_dim: 64,
            num_heads: 2,
            encoder_layers: 2,
            decoder_layers: 2,
            ffn_dim: 128,
            vocab_size: 0,
            lambda: 4,
            max_source_len: 16,
            dropout: 0.1,
            seed: 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.model_dim == 0 || self.num_heads == 0 || self.model_dim % self.num_heads != 0 {
            return fail(format!(
                "model_dim {} must be a positive multiple of num_heads {}",
                self.model_dim, self.num_heads
            ));
        }
        if self.lambda < 2 {
            return fail(format!("lambda must be at least 2, got {}", self.lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.vocab_size < 2 {
            return fail("vocab_size must be at least 2".into());
        }
        if self.max_source_len == 0 || self.ffn_dim == 0 {
            return fail("max_source_len and ffn_dim must be positive".into());
        }
        Ok(())
    }

    /// Size of the graph positional table.
    pub fn max_graph_size(&self) -> usize {
        self.lambda * self.max_source_len
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("model_dim", self.model_dim.to_string()),
            ("num_heads", self.num_heads.to_string()),
            ("encoder_layers", self.encoder_layers.to_string()),
            ("decoder_layers", self.decoder_layers.to_string()),
            ("ffn_dim", self.ffn_dim.to_string()),
            ("vocab_size", self.vocab_size.to_string()),
            ("lambda", self.lambda.to_string()),
            ("max_source_len", self.max_source_len.to_string()),
            ("dropout", self.dropout.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let map = parse_kv(text)?;
        let mut cfg = Self::default();
        for (k, v) in &map {
            match k.as_str() {
                "model_dim" => cfg.model_dim = num(k, v)?,
                "num_heads" => cfg.num_heads = num(k, v)?,
                "encoder_layers" => cfg.encoder_layers = num(k, v)?,
                "decoder_layers" => cfg.decoder_layers = num(k, v)?,
                "ffn_dim" => cfg.ffn_dim = num(k, v)?,
                "vocab_size" => cfg.vocab_size = num(k, v)?,
                "lambda" => cfg.lambda = num(k, v)?,
                "max_source_len" => cfg.max_source_len = num(k, v)?,
                "dropout" => cfg.dropout = num(k, v)?,
                "seed" => cfg.seed = num(k, v)?,
                other => return Err(ModelError::Config(format!("unknown model key {other:?}"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    /// Target tokens per optimizer step.
    pub batch_tokens: usize,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub label_smoothing: f64,
    pub glancing: MaskVariant,
    pub tau_start: f64,
    pub tau_end: f64,
    pub objective: Objective,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_tokens: 2000,
            peak_lr: 5e-4,
            warmup_steps: 500,
            weight_decay: 0.01,
            label_smoothing: 0.1,
            glancing: MaskVariant::Adaptive,
            tau_start: 0.5,
            tau_end: 0.1,
            objective: Objective::Sum,
            clip_norm: 1.0,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |m: String| Err(ModelError::Config(m));
        if self.warmup_steps > self.steps {
            return fail(format!(
                "warmup_steps {} exceeds steps {}",
                self.warmup_steps, self.steps
            ));
        }
        if self.batch_tokens == 0 {
            return fail("batch_tokens must be positive".into());
        }
        if !(self.peak_lr > 0.0) {
            return fail("peak_lr must be positive".into());
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return fail("label_smoothing must lie in [0, 1)".into());
        }
        for tau in [self.tau_start, self.tau_end] {
            if !(0.0..=1.0).contains(&tau) {
                return fail(format!("tau must lie in [0, 1], got {tau}"));
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let glancing = match self.glancing {
            MaskVariant::AllMasked => "all",
            MaskVariant::Uniform => "uniform",
            MaskVariant::Adaptive => "adaptive",
        };
        let objective = match self.objective {
            Objective::Sum => "sum",
            Objective::Max => "max",
        };
        let mut out = String::new();
        for (k, v) in [
            ("steps", self.steps.to_string()),
            ("batch_tokens", self.batch_tokens.to_string()),
            ("peak_lr", self.peak_lr.to_string()),
            ("warmup_steps", self.warmup_steps.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("label_smoothing", self.label_smoothing.to_string()),
            ("glancing", glancing.to_string()),
            ("tau_start", self.tau_start.to_string()),
            ("tau_end", self.tau_end.to_string()),
            ("objective", objective.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("seed", self.seed.to_string()),
        ] {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    /// Warmup then inverse square root:
    /// `peak * min(step / warmup, sqrt(warmup / step))`, steps counted from 1.
    pub fn learning_rate(&self, step: usize) -> f64 {
        let step = step.max(1) as f64;
        if self.warmup_steps == 0 {
            return self.peak_lr;
        }
        let w = self.warmup_steps as f64;
        self.peak_lr * (step / w).min((w / step).sqrt())
    }
}

pub(crate) fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ModelError> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ModelError::Config(format!("line {}: expected key=value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ModelError> {
    v.parse()
        .map_err(|_| ModelError::Config(format!("bad value {v:?} for {key}")))
}
