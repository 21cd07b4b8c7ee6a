//! `train`: glancing training with periodic validation.

use std::fs::OpenOptions;
use std::io::Write;

use anyhow::{bail, Context, Result};
use dagnat_core::data::{load_corpus, RefGroup};
use dagnat_model::checkpoint::{load_checkpoint, save_checkpoint};
use dagnat_model::optim::AdamW;
use dagnat_model::train::{evaluate_lookahead, BatchStream};
use dagnat_model::{Model, ModelConfig, TrainConfig, Trainer};

use crate::args::TrainArgs;
use crate::util::{load_vocab, write_atomic};

pub const METRICS_HEADER: &str = "step,loss,valid_exact_match,valid_bleu";

pub fn train(a: &TrainArgs, seed: u64) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let train = load_corpus(&a.train, &vocab)?.group_by_source();
    let mut valid: Vec<RefGroup<usize>> = match &a.valid {
        Some(p) => load_corpus(p, &vocab)?.group_by_source(),
        None => Vec::new(),
    };
    if let Some(n) = a.valid_limit {
        valid.truncate(n);
    }
    if a.eval_every == 0 {
        bail!("eval_every must be positive");
    }
    let tcfg = TrainConfig {
        steps: a.steps,
        batch_tokens: a.batch_tokens,
        peak_lr: a.peak_lr,
        warmup_steps: a.warmup_steps,
        weight_decay: a.weight_decay,
        label_smoothing: a.label_smoothing,
        glancing: a.glancing,
        tau_start: a.tau_start,
        tau_end: a.tau_end,
        objective: a.objective,
        clip_norm: a.clip_norm,
        seed,
    };
    tcfg.validate()?;

    let (model, step, opt) = match &a.resume {
        Some(path) => {
            let ck = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            if ck.model.cfg.vocab_size != vocab.len() {
                bail!("checkpoint vocabulary size {} differs from {}", ck.model.cfg.vocab_size, vocab.len());
            }
            let opt = ck.optimizer.unwrap_or_else(|| AdamW::new(&ck.model.params));
            (ck.model, ck.step, opt)
        }
        None => {
            let longest = train.iter().chain(&valid).map(|g| g.source.len()).max().unwrap_or(1);
            let mcfg = ModelConfig {
                model_dim: a.model_dim,
                num_heads: a.num_heads,
                encoder_layers: a.encoder_layers,
                decoder_layers: a.decoder_layers,
                ffn_dim: a.ffn_dim,
                vocab_size: vocab.len(),
                lambda: a.lambda,
                max_source_len: a.max_source_len.unwrap_or(longest),
                dropout: a.dropout,
                seed,
            };
            let model = Model::init(mcfg)?;
            let opt = AdamW::new(&model.params);
            (model, 0, opt)
        }
    };
    if step > a.steps {
        bail!("checkpoint is at step {step}, beyond the requested {} steps", a.steps);
    }

    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let resolved = format!("{}{}", model.cfg.to_text(), tcfg.to_text());
    log::info!("resolved configuration:\n{resolved}");
    write_atomic(&a.out.join("config.txt"), &resolved)?;

    let metrics_path = a.out.join("metrics.csv");
    let mut metrics = if step > 0 && metrics_path.exists() {
        OpenOptions::new().append(true).open(&metrics_path)?
    } else {
        let mut f = std::fs::File::create(&metrics_path)?;
        writeln!(f, "{METRICS_HEADER}")?;
        f
    };

    let ckpt_path = a.out.join("model.ckpt");
    let mut trainer = Trainer::resume(model, tcfg, step, opt)?;
    let mut stream = BatchStream::new(&train, a.batch_tokens, seed);
    stream.skip(step);
    let (mut loss_sum, mut loss_count) = (0.0, 0usize);
    while trainer.step < a.steps {
        let stats = trainer.train_step(&stream.next_batch())?;
        if !stats.loss.is_finite() {
            bail!("loss became non-finite at step {}", stats.step);
        }
        if stats.used > 0 {
            loss_sum += stats.loss;
            loss_count += 1;
        }
        if stats.step % a.eval_every == 0 || stats.step == a.steps {
            let loss = if loss_count > 0 { loss_sum / loss_count as f64 } else { 0.0 };
            let (em, bleu) = if valid.is_empty() {
                (String::new(), String::new())
            } else {
                let r = evaluate_lookahead(&trainer.model, &valid)?;
                (format!("{:.6}", r.exact_match), format!("{:.6}", r.bleu))
            };
            writeln!(metrics, "{},{loss:.6},{em},{bleu}", stats.step)?;
            metrics.flush()?;
            log::info!("step {} loss {loss:.4} exact {em} bleu {bleu} lr {:.2e}", stats.step, stats.lr);
            (loss_sum, loss_count) = (0.0, 0);
        }
        if a.save_every > 0 && stats.step % a.save_every == 0 && stats.step < a.steps {
            let snapshot = a.out.join(format!("step-{}.ckpt", stats.step));
            save_checkpoint(&snapshot, &trainer.model, trainer.step, Some(&trainer.opt))?;
        }
    }
    save_checkpoint(&ckpt_path, &trainer.model, trainer.step, Some(&trainer.opt))?;
    Ok(())
}
