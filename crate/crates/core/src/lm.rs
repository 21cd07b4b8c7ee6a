//! Count-based n-gram language model with stupid-backoff scoring, used to
//! rescore beam-search hypotheses.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::decoding::LanguageModel;
use crate::{Error, Result};

pub const DEFAULT_BACKOFF: f64 = 0.4;
const MAGIC: &str = "dagnat-ngram";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NgramLm {
    order: usize,
    bos: usize,
    eos: usize,
    backoff_factor: f64,
    /// Distinct predictable token types plus one slot for unseen tokens.
    vocab_size: usize,
    /// Occurrences of every k-gram, `1 <= k <= order`.
    counts: HashMap<Vec<usize>, u64>,
    /// Number of predicted tokens (everything except the sentence-start marker).
    total: u64,
}

impl NgramLm {
    /// Count all k-grams (`k <= order`) over sentences padded as
    /// `bos w_1 .. w_n eos`. A leading `bos` or trailing `eos` already present
    /// in a sentence is not duplicated.
    pub fn fit(corpus: &[Vec<usize>], order: usize, bos: usize, eos: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("n-gram order must be at least 1".into()));
        }
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let mut counts: HashMap<Vec<usize>, u64> = HashMap::new();
        let mut types: HashSet<usize> = HashSet::new();
        let mut total = 0;
        for sent in corpus {
            let padded = pad(sent, bos, eos);
            for (pos, &w) in padded.iter().enumerate() {
                if pos > 0 {
                    total += 1;
                    types.insert(w);
                }
                for k in 1..=order.min(pos + 1) {
                    *counts.entry(padded[pos + 1 - k..=pos].to_vec()).or_insert(0) += 1;
                }
            }
        }
        Ok(Self {
            order,
            bos,
            eos,
            backoff_factor: DEFAULT_BACKOFF,
            vocab_size: types.len() + 1,
            counts,
            total,
        })
    }

    pub fn with_backoff(mut self, factor: f64) -> Self {
        self.backoff_factor = factor;
        self
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn backoff_factor(&self) -> f64 {
        self.backoff_factor
    }

    pub fn count(&self, gram: &[usize]) -> u64 {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    /// Stupid-backoff probability of `token` after `history` (the history is
    /// already cut to at most `order - 1` tokens).
    fn prob(&self, history: &[usize], token: usize) -> f64 {
        let mut scale = 1.0;
        let mut gram: Vec<usize> = Vec::with_capacity(history.len() + 1);
        for start in 0..history.len() {
            let h = &history[start..];
            let denom = self.count(h);
            if denom > 0 {
                gram.clear();
                gram.extend_from_slice(h);
                gram.push(token);
                let num = self.count(&gram);
                if num > 0 {
                    return scale * num as f64 / denom as f64;
                }
            }
            scale *= self.backoff_factor;
        }
        scale * (self.count(&[token]) + 1) as f64 / (self.total + self.vocab_size as u64) as f64
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    /// Text serialization: a versioned header followed by one
    /// `count id id ...` record per gram, sorted by length then ids.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "order {}", self.order);
        let _ = writeln!(out, "backoff {}", self.backoff_factor);
        let _ = writeln!(out, "bos {}", self.bos);
        let _ = writeln!(out, "eos {}", self.eos);
        let _ = writeln!(out, "vocab_size {}", self.vocab_size);
        let _ = writeln!(out, "total {}", self.total);
        let _ = writeln!(out, "grams {}", self.counts.len());
        let sorted: BTreeMap<(usize, &Vec<usize>), u64> =
            self.counts.iter().map(|(g, &c)| ((g.len(), g), c)).collect();
        for ((_, gram), count) in sorted {
            let _ = write!(out, "{count}");
            for id in gram {
                let _ = write!(out, " {id}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |msg: &str| Error::LmFormat(msg.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty file"))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(bad("missing magic header"));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing version"))?;
        if version != FORMAT_VERSION {
            return Err(Error::LmFormat(format!(
                "unsupported version {version}, expected {FORMAT_VERSION}"
            )));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated header"))?;
            let (key, value) = line.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
            if key != name {
                return Err(Error::LmFormat(format!("expected {name}, found {key}")));
            }
            Ok(value.to_string())
        };
        let num = |s: String| s.parse::<u64>().map_err(|_| Error::LmFormat(format!("bad number {s:?}")));
        let order = num(field("order")?)? as usize;
        let backoff_factor: f64 = field("backoff")?
            .parse()
            .map_err(|_| bad("bad backoff factor"))?;
        let bos = num(field("bos")?)? as usize;
        let eos = num(field("eos")?)? as usize;
        let vocab_size = num(field("vocab_size")?)? as usize;
        let total = num(field("total")?)?;
        let n = num(field("grams")?)? as usize;
        let mut counts = HashMap::with_capacity(n);
        for line in lines.by_ref().take(n) {
            let mut it = line.split_whitespace().map(|x| x.parse::<u64>());
            let count = it
                .next()
                .and_then(|c| c.ok())
                .ok_or_else(|| bad("bad gram record"))?;
            let gram = it
                .map(|x| x.map(|v| v as usize))
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| bad("bad gram record"))?;
            if gram.is_empty() || gram.len() > order {
                return Err(bad("gram length out of range"));
            }
            counts.insert(gram, count);
        }
        if counts.len() != n {
            return Err(bad("truncated gram records"));
        }
        Ok(Self {
            order,
            bos,
            eos,
            backoff_factor,
            vocab_size,
            counts,
            total,
        })
    }
}

fn pad(sent: &[usize], bos: usize, eos: usize) -> Vec<usize> {
    let mut padded = Vec::with_capacity(sent.len() + 2);
    if sent.first() != Some(&bos) {
        padded.push(bos);
    }
    padded.extend_from_slice(sent);
    if padded.last() != Some(&eos) || padded.len() == 1 {
        padded.push(eos);
    }
    padded
}

impl LanguageModel for NgramLm {
    /// `log P(token | prefix)`. The history always starts with the sentence
    /// marker; a leading marker in `prefix` is treated as that context and
    /// scores 0 when it is itself the scored token.
    fn score_next(&self, prefix: &[usize], token: usize) -> f64 {
        if prefix.is_empty() && token == self.bos {
            return 0.0;
        }
        let keep = self.order - 1;
        let mut ctx: Vec<usize> = Vec::with_capacity(keep);
        if prefix.first() != Some(&self.bos) {
            ctx.push(self.bos);
        }
        ctx.extend_from_slice(prefix);
        let history = &ctx[ctx.len().saturating_sub(keep)..];
        self.prob(history, token).ln()
    }
}

/// Score a token sequence with a fitted model.
pub fn score_ngram(lm: &NgramLm, tokens: &[usize]) -> f64 {
    lm.score(tokens)
}
