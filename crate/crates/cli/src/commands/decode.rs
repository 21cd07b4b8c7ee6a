//! `decode`: one hypothesis per source, or `k` samples per source.

use std::fmt::Write as _;

use anyhow::{bail, Context, Result};
use dagnat_core::decoding::{decode_beam, decode_greedy, decode_lookahead, decode_sample, DecodeConfig, LanguageModel};
use dagnat_core::lm::NgramLm;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{DecodeArgs, Strategy};
use crate::util::{emit, load_model, read_sources};

pub fn decode(a: &DecodeArgs, seed: u64) -> Result<()> {
    let cfg = DecodeConfig {
        alpha: a.alpha,
        gamma: a.gamma,
        beam_size: a.beam_size,
        per_length_cap: a.per_length_cap,
        expand_top_k: a.expand_top_k,
        top_p: a.top_p,
        temperature: a.temperature,
    };
    cfg.validate()?;
    if a.k == 0 || (a.k > 1 && a.strategy != Strategy::Sample) {
        bail!("--k {} requires the sample strategy (and must be positive)", a.k);
    }
    if a.lm.is_some() && a.strategy != Strategy::Beam {
        bail!("--lm applies only to beam decoding");
    }
    let lm = match &a.lm {
        Some(p) => Some(NgramLm::load(p).with_context(|| format!("loading language model {}", p.display()))?),
        None => None,
    };
    let (ck, vocab) = load_model(&a.checkpoint, &a.vocab)?;
    let sources = read_sources(&a.input, &vocab)?;
    let mut out = String::new();
    for (i, src) in sources.iter().enumerate() {
        let dag = ck
            .model
            .dag_for_source(src, None)
            .with_context(|| format!("{}: line {}", a.input.display(), i + 1))?;
        match a.strategy {
            Strategy::Greedy => writeln!(out, "{}", vocab.decode(&decode_greedy(&dag)))?,
            Strategy::Lookahead => writeln!(out, "{}", vocab.decode(&decode_lookahead(&dag)))?,
            Strategy::Beam => {
                let hyps = decode_beam(&dag, &cfg, lm.as_ref().map(|l| l as &dyn LanguageModel))?;
                let best = hyps.first().map(|h| h.tokens.as_slice()).unwrap_or(&[]);
                writeln!(out, "{}", vocab.decode(best))?;
            }
            Strategy::Sample => {
                // One stream per line keeps samples independent of the other lines.
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                for _ in 0..a.k {
                    writeln!(out, "{}", vocab.decode(&decode_sample(&dag, &cfg, &mut rng)?))?;
                }
            }
        }
    }
    emit(a.out.as_deref(), &out)
}
