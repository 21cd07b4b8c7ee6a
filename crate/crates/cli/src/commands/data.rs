//! `gen-data` and `lm-train`.

use anyhow::{bail, Context, Result};
use dagnat_core::data::{
    gen_synthetic, groups_to_sources, groups_to_tsv, load_corpus, Order, SynthTaskConfig, Vocab, BOS, EOS,
};
use dagnat_core::lm::NgramLm;

use crate::args::{GenDataArgs, LmTrainArgs};
use crate::util::{load_vocab, write_atomic};

fn parse_orders(s: &str) -> Result<Vec<Order>> {
    s.split(',')
        .map(|o| match o.trim() {
            "forward" => Ok(Order::Forward),
            "reverse" => Ok(Order::Reverse),
            other => bail!("unknown order transform {other:?} (expected forward or reverse)"),
        })
        .collect()
}

pub fn gen_data(a: &GenDataArgs, seed: u64) -> Result<()> {
    let cfg = SynthTaskConfig {
        alphabet_size: a.alphabet_size,
        min_len: a.min_len,
        max_len: a.max_len,
        num_maps: a.num_maps,
        orders: parse_orders(&a.orders)?,
        train_sources: a.train_sources,
        eval_sources: a.eval_sources,
        seed,
    };
    let data = gen_synthetic(&cfg)?;
    let vocab = Vocab::from_tokens(
        data.train
            .iter()
            .chain(&data.eval)
            .flat_map(|g| g.source.iter().chain(g.references.iter().flatten())),
    );
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_atomic(&a.out.join("train.tsv"), groups_to_tsv(&data.train))?;
    write_atomic(&a.out.join("eval.tsv"), groups_to_tsv(&data.eval))?;
    write_atomic(&a.out.join("eval.src"), groups_to_sources(&data.eval))?;
    write_atomic(&a.out.join("vocab.txt"), vocab.to_text())?;
    log::info!(
        "wrote {} train and {} eval sources, {} references each, vocabulary {}",
        data.train.len(),
        data.eval.len(),
        cfg.references_per_source(),
        vocab.len()
    );
    Ok(())
}

pub fn lm_train(a: &LmTrainArgs) -> Result<()> {
    let vocab = load_vocab(&a.vocab)?;
    let corpus = load_corpus(&a.train, &vocab)?;
    if !(0.0..=1.0).contains(&a.backoff) {
        bail!("backoff factor must lie in [0, 1], got {}", a.backoff);
    }
    let lm = NgramLm::fit(&corpus.targets(), a.order, BOS, EOS)?.with_backoff(a.backoff);
    write_atomic(&a.out, lm.to_text())
}
