//! Vocabulary, corpus I/O and the synthetic multi-reference translation task.
//!
//! Corpus files are UTF-8 TSV, one `source<TAB>target` pair per line,
//! whitespace-tokenized. A source may appear on several lines with different
//! targets. Vocabulary files list one token per line, reserved tokens first.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};

use crate::{Error, Result};

pub const MASK: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const PAD: usize = 3;
pub const RESERVED: [&str; 4] = ["<mask>", "<s>", "</s>", "<pad>"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    /// Reserved tokens first, then the given tokens in sorted order.
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let extra: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| !RESERVED.contains(&t.as_str()))
            .collect();
        let tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).chain(extra).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Whitespace-tokenize and map to ids. `line` is used in errors.
    pub fn encode(&self, text: &str, line: usize) -> Result<Vec<usize>> {
        text.split_whitespace()
            .map(|t| {
                if RESERVED.contains(&t) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("reserved token {t:?} in corpus text"),
                    });
                }
                self.id(t).ok_or_else(|| Error::UnknownToken {
                    line,
                    token: t.to_string(),
                })
            })
            .collect()
    }

    /// Space-joined tokens, with sentence markers, mask and padding removed.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i > PAD)
            .map(|&i| self.token(i).unwrap_or("<unk>"))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for t in &self.tokens {
            let _ = writeln!(out, "{t}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.lines().collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Parse {
                line: 1,
                msg: "vocabulary must start with the reserved tokens".into(),
            });
        }
        let mut seen = HashSet::new();
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid token {t:?}"),
                });
            }
            if !seen.insert(*t) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("duplicate token {t:?}"),
                });
            }
        }
        let tokens: Vec<String> = tokens.into_iter().map(String::from).collect();
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Ok(Self { tokens, index })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Union of all tokens in the given corpus files.
pub fn build_vocab<P: AsRef<Path>>(paths: &[P]) -> Result<Vocab> {
    let mut tokens = BTreeSet::new();
    for p in paths {
        let text = std::fs::read_to_string(p)?;
        for (i, line) in text.lines().enumerate() {
            let (src, tgt) = split_pair(line, i + 1)?;
            tokens.extend(src.split_whitespace().map(str::to_string));
            tokens.extend(tgt.split_whitespace().map(str::to_string));
        }
    }
    if tokens.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(Vocab::from_tokens(tokens))
}

fn split_pair(line: &str, lineno: usize) -> Result<(&str, &str)> {
    let fields: Vec<&str> = line.split('\t').collect();
    if fields.len() != 2 {
        return Err(Error::Parse {
            line: lineno,
            msg: format!("expected 2 tab-separated fields, found {}", fields.len()),
        });
    }
    if fields[0].trim().is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "empty source".into(),
        });
    }
    if fields[1].trim().is_empty() {
        return Err(Error::Parse {
            line: lineno,
            msg: "empty target".into(),
        });
    }
    Ok((fields[0], fields[1]))
}

/// Group a `source<TAB>reference` text by source, keeping first-appearance
/// order and dropping duplicate references. Tokens are whitespace-separated.
pub fn parse_ref_groups(text: &str) -> Result<Vec<RefGroup<String>>> {
    let mut index: HashMap<Vec<String>, usize> = HashMap::new();
    let mut groups: Vec<RefGroup<String>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = split_pair(line, i + 1)?;
        let source: Vec<String> = src.split_whitespace().map(str::to_string).collect();
        let reference: Vec<String> = tgt.split_whitespace().map(str::to_string).collect();
        let g = *index.entry(source.clone()).or_insert_with(|| {
            groups.push(RefGroup {
                source,
                references: Vec::new(),
            });
            groups.len() - 1
        });
        if !groups[g].references.contains(&reference) {
            groups[g].references.push(reference);
        }
    }
    if groups.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok(groups)
}

/// Source/target id pairs. Targets are wrapped as `BOS ... EOS`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Vec<usize>, Vec<usize>)>,
}

/// A source with every reference seen for it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefGroup<T> {
    pub source: Vec<T>,
    pub references: Vec<Vec<T>>,
}

impl ParallelCorpus {
    pub fn parse(text: &str, vocab: &Vocab) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let (src, tgt) = split_pair(line, i + 1)?;
            let source = vocab.encode(src, i + 1)?;
            let mut target = vec![BOS];
            target.extend(vocab.encode(tgt, i + 1)?);
            target.push(EOS);
            pairs.push((source, target));
        }
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(Self { pairs })
    }

    pub fn load(path: impl AsRef<Path>, vocab: &Vocab) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?, vocab)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Group references by source, in order of first appearance. Duplicate
    /// references are kept once.
    pub fn group_by_source(&self) -> Vec<RefGroup<usize>> {
        let mut order: Vec<RefGroup<usize>> = Vec::new();
        let mut at: HashMap<&[usize], usize> = HashMap::new();
        for (src, tgt) in &self.pairs {
            let idx = *at.entry(src.as_slice()).or_insert_with(|| {
                order.push(RefGroup {
                    source: src.clone(),
                    references: Vec::new(),
                });
                order.len() - 1
            });
            if !order[idx].references.contains(tgt) {
                order[idx].references.push(tgt.clone());
            }
        }
        order
    }

    /// Target sides, for language-model training.
    pub fn targets(&self) -> Vec<Vec<usize>> {
        self.pairs.iter().map(|(_, t)| t.clone()).collect()
    }
}

/// Load a corpus file with a closed vocabulary.
pub fn load_corpus(path: impl AsRef<Path>, vocab: &Vocab) -> Result<ParallelCorpus> {
    ParallelCorpus::load(path, vocab)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Order {
    Forward,
    Reverse,
}

/// Prefixes of the synonym maps: map `k` rewrites digit `d` to `PREFIXES[k] + d`.
pub const MAP_PREFIXES: [&str; 8] = ["x", "y", "z", "w", "v", "u", "q", "r"];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthTaskConfig {
    pub alphabet_size: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub num_maps: usize,
    pub orders: Vec<Order>,
    pub train_sources: usize,
    pub eval_sources: usize,
    pub seed: u64,
}

impl Default for SynthTaskConfig {
    fn default() -> Self {
        Self {
            alphabet_size: 10,
            min_len: 3,
            max_len: 8,
            num_maps: 2,
            orders: vec![Order::Forward, Order::Reverse],
            train_sources: 2000,
            eval_sources: 200,
            seed: 1,
        }
    }
}

impl SynthTaskConfig {
    pub fn references_per_source(&self) -> usize {
        self.num_maps * self.orders.len()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.references_per_source() < 2 {
            return fail(format!(
                "task needs at least 2 references per source, got {} maps x {} orders",
                self.num_maps,
                self.orders.len()
            ));
        }
        if self.num_maps > MAP_PREFIXES.len() {
            return fail(format!("at most {} synonym maps", MAP_PREFIXES.len()));
        }
        if self.orders.iter().collect::<HashSet<_>>().len() != self.orders.len() {
            return fail("duplicate order transform".into());
        }
        if self.alphabet_size < 2 {
            return fail("alphabet needs at least 2 symbols".into());
        }
        if self.min_len < 2 || self.min_len > self.max_len {
            return fail(format!("invalid length range {}..={}", self.min_len, self.max_len));
        }
        let capacity: f64 = (self.min_len..=self.max_len)
            .map(|n| (self.alphabet_size as f64).powi(n as i32))
            .sum();
        if (self.train_sources + self.eval_sources) as f64 > capacity / 2.0 {
            return fail("too many sources requested for the alphabet and length range".into());
        }
        Ok(())
    }
}

/// Generated task: disjoint train and eval sources with their full reference sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthData {
    pub train: Vec<RefGroup<String>>,
    pub eval: Vec<RefGroup<String>>,
}

/// Every `(map, order)` rewrite of `source`.
pub fn references_for(source: &[String], cfg: &SynthTaskConfig) -> Vec<Vec<String>> {
    let mut refs = Vec::new();
    for prefix in &MAP_PREFIXES[..cfg.num_maps] {
        let mapped: Vec<String> = source.iter().map(|d| format!("{prefix}{d}")).collect();
        for order in &cfg.orders {
            let mut r = mapped.clone();
            if *order == Order::Reverse {
                r.reverse();
            }
            refs.push(r);
        }
    }
    refs
}

pub fn gen_synthetic(cfg: &SynthTaskConfig) -> Result<SynthData> {
    cfg.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let needs_asymmetry = cfg.orders.contains(&Order::Reverse) && cfg.orders.len() > 1;
    let mut seen: HashSet<Vec<usize>> = HashSet::new();
    let mut sources: Vec<Vec<String>> = Vec::new();
    while sources.len() < cfg.train_sources + cfg.eval_sources {
        let n = rng.random_range(cfg.min_len..=cfg.max_len);
        let digits: Vec<usize> = (0..n).map(|_| rng.random_range(0..cfg.alphabet_size)).collect();
        // Palindromes would make forward and reverse references coincide.
        if needs_asymmetry && digits.iter().eq(digits.iter().rev()) {
            continue;
        }
        if seen.insert(digits.clone()) {
            sources.push(digits.iter().map(|d| d.to_string()).collect());
        }
    }
    let groups: Vec<RefGroup<String>> = sources
        .into_iter()
        .map(|source| RefGroup {
            references: references_for(&source, cfg),
            source,
        })
        .collect();
    let mut groups = groups.into_iter();
    let train = groups.by_ref().take(cfg.train_sources).collect();
    let eval = groups.collect();
    Ok(SynthData { train, eval })
}

/// TSV with one line per `(source, reference)` pair.
pub fn groups_to_tsv(groups: &[RefGroup<String>]) -> String {
    let mut out = String::new();
    for g in groups {
        let src = g.source.join(" ");
        for r in &g.references {
            let _ = writeln!(out, "{src}\t{}", r.join(" "));
        }
    }
    out
}

/// One source per line.
pub fn groups_to_sources(groups: &[RefGroup<String>]) -> String {
    let mut out = String::new();
    for g in groups {
        let _ = writeln!(out, "{}", g.source.join(" "));
    }
    out
}

/// Draw one reference per group with a seeded generator.
pub fn sample_references<'a, R: Rng + ?Sized>(
    groups: &'a [RefGroup<usize>],
    rng: &mut R,
) -> Vec<(&'a [usize], &'a [usize])> {
    groups
        .iter()
        .map(|g| {
            let r = &g.references[rng.random_range(0..g.references.len())];
            (g.source.as_slice(), r.as_slice())
        })
        .collect()
}
