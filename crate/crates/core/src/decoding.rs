//! Inference over a [`Dag`]: greedy, lookahead, prefix-merging beam search
//! with optional language-model fusion, and nucleus sampling.

use std::collections::HashMap;

use rand::Rng;

use crate::dag::Dag;
use crate::logspace::{argmax, log_add};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodeConfig {
    /// Length-penalty exponent.
    pub alpha: f64,
    /// Language-model weight. Ignored when no model is supplied.
    pub gamma: f64,
    pub beam_size: usize,
    /// Beams kept per prefix length at each vertex.
    pub per_length_cap: usize,
    /// Joint `(vertex, token)` candidates used to extend each beam.
    pub expand_top_k: usize,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            alpha: 1.1,
            gamma: 0.1,
            beam_size: 200,
            per_length_cap: 10,
            expand_top_k: 5,
            top_p: 0.8,
            temperature: 1.0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.per_length_cap == 0 || self.expand_top_k == 0 {
            return Err(Error::Config(
                "beam_size, per_length_cap and expand_top_k must be at least 1".into(),
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(Error::Config(format!("top_p must lie in (0, 1], got {}", self.top_p)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }

    /// Length-normalized fused score of a hypothesis.
    pub fn score(&self, log_prob: f64, lm_log_prob: f64, len: usize) -> f64 {
        (log_prob + self.gamma * lm_log_prob) / (len as f64).powf(self.alpha)
    }
}

/// A language model usable for beam fusion. Scores must factor over tokens:
/// `score(p ++ [t]) == score(p) + score_next(p, t)`.
pub trait LanguageModel {
    fn score_next(&self, prefix: &[usize], token: usize) -> f64;

    fn score(&self, tokens: &[usize]) -> f64 {
        (0..tokens.len())
            .map(|i| self.score_next(&tokens[..i], tokens[i]))
            .sum()
    }
}

/// Follow the most probable transition from each vertex, emitting the most
/// probable token at every visited vertex.
pub fn decode_greedy(dag: &Dag) -> Vec<usize> {
    let l = dag.graph_size();
    let tokens = dag.argmax_tokens();
    let edges: Vec<usize> = (0..l).map(|u| argmax(dag.log_transition_row(u))).collect();
    walk(&tokens, &edges, l)
}

/// Like [`decode_greedy`], but each transition is weighted by the best token
/// probability at its destination, choosing the next vertex and token jointly.
pub fn decode_lookahead(dag: &Dag) -> Vec<usize> {
    let l = dag.graph_size();
    let tokens = dag.argmax_tokens();
    let best: Vec<f64> = (0..l)
        .map(|u| dag.log_token_prob(u, tokens[u]))
        .collect();
    let mut row = vec![0.0; l];
    let edges: Vec<usize> = (0..l)
        .map(|u| {
            for (v, slot) in row.iter_mut().enumerate() {
                *slot = dag.log_transition(u, v) + best[v];
            }
            argmax(&row)
        })
        .collect();
    walk(&tokens, &edges, l)
}

fn walk(tokens: &[usize], edges: &[usize], l: usize) -> Vec<usize> {
    let mut at = 0;
    let mut out = vec![tokens[0]];
    while at + 1 < l {
        let next = edges[at];
        debug_assert!(next > at, "transition rows must point forward");
        at = next;
        out.push(tokens[at]);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    /// Fused, length-normalized score.
    pub score: f64,
    /// Log of the summed probability of all retained paths emitting `tokens`.
    pub log_prob: f64,
    /// Language-model log probability, 0 without a model.
    pub lm_log_prob: f64,
}

/// Top joint `(vertex, token)` successors of every vertex.
fn expansion_candidates(dag: &Dag, k: usize) -> Vec<Vec<(usize, usize, f64)>> {
    let l = dag.graph_size();
    let top_tokens: Vec<Vec<(usize, f64)>> = (0..l)
        .map(|v| {
            let mut toks: Vec<(usize, f64)> = dag
                .log_token_row(v)
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, lp)| lp > f64::NEG_INFINITY)
                .collect();
            toks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            toks.truncate(k);
            toks
        })
        .collect();
    (0..l)
        .map(|i| {
            let mut cands: Vec<(usize, usize, f64)> = Vec::new();
            for v in i + 1..l {
                let le = dag.log_transition(i, v);
                if le == f64::NEG_INFINITY {
                    continue;
                }
                cands.extend(top_tokens[v].iter().map(|&(t, lp)| (v, t, le + lp)));
            }
            cands.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
            cands.truncate(k);
            cands
        })
        .collect()
}

/// Prefix beam search over the graph.
///
/// A beam is a token prefix tracked jointly over every path realizing it, with
/// one probability sum per end vertex. Vertices are visited in order; at each
/// vertex the beams ending there are ranked by the fused score, cut to
/// `per_length_cap` per prefix length and `beam_size` overall, and extended by
/// the top `expand_top_k` joint successors. Extensions that land on an
/// existing `(prefix, vertex)` are merged by summing probabilities.
///
/// While searching, a beam is ranked by its probability summed over all end
/// vertices. Complete hypotheses at the terminal vertex are ranked by the
/// probability of the paths ending there. Returns the terminal hypotheses,
/// best first.
pub fn decode_beam(dag: &Dag, cfg: &DecodeConfig, lm: Option<&dyn LanguageModel>) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    let l = dag.graph_size();
    let gamma = if lm.is_some() { cfg.gamma } else { 0.0 };
    let cfg = DecodeConfig { gamma, ..*cfg };
    let cands = expansion_candidates(dag, cfg.expand_top_k);

    // Per vertex: prefix -> log s_v(prefix).
    let mut groups: Vec<HashMap<Vec<usize>, f64>> = vec![HashMap::new(); l];
    // prefix -> log sum_v s_v(prefix), accumulated as mass arrives.
    let mut totals: HashMap<Vec<usize>, f64> = HashMap::new();
    let mut lm_cache: HashMap<Vec<usize>, f64> = HashMap::new();

    let mut first: Vec<(usize, f64)> = dag
        .log_token_row(0)
        .iter()
        .copied()
        .enumerate()
        .filter(|&(_, lp)| lp > f64::NEG_INFINITY)
        .collect();
    first.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    first.truncate(cfg.expand_top_k);
    for (t, lp) in first {
        groups[0].insert(vec![t], lp);
        totals.insert(vec![t], lp);
        if let Some(lm) = lm {
            lm_cache.insert(vec![t], lm.score_next(&[], t));
        }
    }

    let lm_of = |prefix: &Vec<usize>, cache: &HashMap<Vec<usize>, f64>| cache.get(prefix).copied().unwrap_or(0.0);

    for i in 0..l.saturating_sub(1) {
        let group = std::mem::take(&mut groups[i]);
        let mut beams: Vec<(Vec<usize>, f64, f64)> = group
            .into_iter()
            .map(|(prefix, log_s)| {
                let score = cfg.score(totals[&prefix], lm_of(&prefix, &lm_cache), prefix.len());
                (prefix, log_s, score)
            })
            .collect();
        beams.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
        let mut per_len: HashMap<usize, usize> = HashMap::new();
        beams.retain(|(prefix, _, _)| {
            let n = per_len.entry(prefix.len()).or_insert(0);
            *n += 1;
            *n <= cfg.per_length_cap
        });
        beams.truncate(cfg.beam_size);

        for (prefix, log_s, _) in &beams {
            for &(v, t, lp) in &cands[i] {
                let mut next = Vec::with_capacity(prefix.len() + 1);
                next.extend_from_slice(prefix);
                next.push(t);
                let mass = log_s + lp;
                if let Some(lm) = lm {
                    if !lm_cache.contains_key(&next) {
                        let s = lm_of(prefix, &lm_cache) + lm.score_next(prefix, t);
                        lm_cache.insert(next.clone(), s);
                    }
                }
                let tot = totals.entry(next.clone()).or_insert(f64::NEG_INFINITY);
                *tot = log_add(*tot, mass);
                let slot = groups[v].entry(next).or_insert(f64::NEG_INFINITY);
                *slot = log_add(*slot, mass);
            }
        }
    }

    let terminal = std::mem::take(&mut groups[l - 1]);
    let mut out: Vec<Hypothesis> = terminal
        .into_iter()
        .map(|(tokens, log_prob)| {
            let lm_log_prob = lm_of(&tokens, &lm_cache);
            Hypothesis {
                score: cfg.score(log_prob, lm_log_prob, tokens.len()),
                tokens,
                log_prob,
                lm_log_prob,
            }
        })
        .collect();
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens)));
    assert!(!out.is_empty(), "beam search always reaches the terminal vertex");
    Ok(out)
}

/// Temperature-scaled nucleus distribution over `log_probs`: probabilities
/// are raised to `1 / temperature`, renormalized, and cut to the smallest
/// most-probable set with mass at least `top_p`, renormalized again.
/// Returns `(index, probability)` pairs, most probable first.
pub fn nucleus(log_probs: &[f64], top_p: f64, temperature: f64) -> Vec<(usize, f64)> {
    let scaled: Vec<f64> = log_probs.iter().map(|&lp| lp / temperature).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut probs: Vec<(usize, f64)> = scaled
        .iter()
        .enumerate()
        .map(|(i, &s)| (i, if s == f64::NEG_INFINITY { 0.0 } else { (s - max).exp() }))
        .filter(|&(_, p)| p > 0.0)
        .collect();
    let z: f64 = probs.iter().map(|p| p.1).sum();
    probs.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut acc = 0.0;
    let mut keep = 0;
    for &(_, p) in &probs {
        keep += 1;
        acc += p / z;
        if acc >= top_p - 1e-9 {
            break;
        }
    }
    probs.truncate(keep);
    let kept: f64 = probs.iter().map(|p| p.1).sum();
    for p in &mut probs {
        p.1 /= kept;
    }
    probs
}

fn draw<R: Rng + ?Sized>(dist: &[(usize, f64)], rng: &mut R) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for &(i, p) in dist {
        acc += p;
        if r < acc {
            return i;
        }
    }
    dist.last().expect("nucleus is never empty").0
}

/// A sampled walk: emitted tokens and the visited vertices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledWalk {
    pub tokens: Vec<usize>,
    pub vertices: Vec<usize>,
}

/// Sample a walk: a token at vertex 1, then repeatedly the next vertex from
/// the transition row and a token at that vertex, each from its own nucleus
/// distribution. Stops at vertex `L`.
pub fn sample_walk<R: Rng + ?Sized>(dag: &Dag, cfg: &DecodeConfig, rng: &mut R) -> Result<SampledWalk> {
    cfg.validate()?;
    let l = dag.graph_size();
    let mut at = 0;
    let mut tokens = vec![draw(&nucleus(dag.log_token_row(0), cfg.top_p, cfg.temperature), rng)];
    let mut vertices = vec![0];
    while at + 1 < l {
        at = draw(&nucleus(dag.log_transition_row(at), cfg.top_p, cfg.temperature), rng);
        vertices.push(at);
        tokens.push(draw(&nucleus(dag.log_token_row(at), cfg.top_p, cfg.temperature), rng));
    }
    Ok(SampledWalk { tokens, vertices })
}

pub fn decode_sample<R: Rng + ?Sized>(dag: &Dag, cfg: &DecodeConfig, rng: &mut R) -> Result<Vec<usize>> {
    Ok(sample_walk(dag, cfg, rng)?.tokens)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::fixtures::{chain, d1, A, B, END};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn wide() -> DecodeConfig {
        DecodeConfig {
            alpha: 1.0,
            gamma: 0.0,
            beam_size: 10_000,
            per_length_cap: 10_000,
            expand_top_k: 10_000,
            ..Default::default()
        }
    }

    #[test]
    fn greedy_on_d1() {
        assert_eq!(decode_greedy(&d1()), vec![A, B, B, END]);
    }

    #[test]
    fn lookahead_on_d1() {
        assert_eq!(decode_lookahead(&d1()), vec![A, B, END]);
    }

    #[test]
    fn chain_decoders_agree() {
        let p = vec![vec![0.2, 0.8], vec![0.6, 0.4], vec![0.1, 0.9]];
        let dag = chain(&p);
        assert_eq!(decode_greedy(&dag), vec![1, 0, 1]);
        assert_eq!(decode_lookahead(&dag), vec![1, 0, 1]);
        let beam = decode_beam(&dag, &wide(), None).unwrap();
        assert_eq!(beam[0].tokens, vec![1, 0, 1]);
    }

    #[test]
    fn single_vertex() {
        let dag = chain(&[vec![0.3, 0.7]]);
        assert_eq!(decode_greedy(&dag), vec![1]);
        assert_eq!(decode_lookahead(&dag), vec![1]);
        assert_eq!(decode_beam(&dag, &wide(), None).unwrap()[0].tokens, vec![1]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(decode_sample(&dag, &wide(), &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn beam_merges_paths_on_d1() {
        let hyps = decode_beam(&d1(), &wide(), None).unwrap();
        assert_eq!(hyps[0].tokens, vec![A, B, END]);
        assert!((hyps[0].log_prob.exp() - 0.273375).abs() < 1e-9);
        let greedy = hyps.iter().find(|h| h.tokens == vec![A, B, B, END]).unwrap();
        assert!((greedy.log_prob.exp() - 0.093555).abs() < 1e-9);
    }

    #[test]
    fn uniform_max_token_lookahead_equals_greedy() {
        let p = vec![
            vec![0.6, 0.4, 0.0],
            vec![0.0, 0.6, 0.4],
            vec![0.4, 0.6, 0.0],
            vec![0.0, 0.4, 0.6],
        ];
        let e = vec![
            vec![0.0, 0.2, 0.5, 0.3],
            vec![0.0, 0.0, 0.7, 0.3],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0; 4],
        ];
        let dag = Dag::from_probs(&p, &e).unwrap();
        assert_eq!(decode_lookahead(&dag), decode_greedy(&dag));
    }

    #[test]
    fn narrow_beam_is_lookahead() {
        let cfg = DecodeConfig {
            alpha: 0.0,
            gamma: 0.0,
            beam_size: 1,
            per_length_cap: 1,
            expand_top_k: 1,
            ..Default::default()
        };
        let hyps = decode_beam(&d1(), &cfg, None).unwrap();
        assert_eq!(hyps[0].tokens, decode_lookahead(&d1()));
    }

    /// Heavily penalizes ending before three tokens.
    struct PreferLong;

    impl LanguageModel for PreferLong {
        fn score_next(&self, prefix: &[usize], token: usize) -> f64 {
            if token == END && prefix.len() < 3 {
                -20.0
            } else {
                0.0
            }
        }
    }

    #[test]
    fn language_model_changes_ranking() {
        let cfg = DecodeConfig {
            gamma: 1.0,
            ..wide()
        };
        let hyps = decode_beam(&d1(), &cfg, Some(&PreferLong)).unwrap();
        assert_eq!(hyps[0].tokens, vec![A, B, B, END]);
        let top = &hyps[0];
        assert!((top.score - cfg.score(top.log_prob, PreferLong.score(&top.tokens), 4)).abs() < 1e-12);
        // Without a model gamma is ignored.
        let plain = decode_beam(&d1(), &cfg, None).unwrap();
        assert_eq!(plain[0].tokens, vec![A, B, END]);
    }

    #[test]
    fn nucleus_on_d1_first_row() {
        let d = d1();
        let n = nucleus(d.log_transition_row(0), 0.8, 1.0);
        assert_eq!(n.iter().map(|p| p.0).collect::<Vec<_>>(), vec![1, 2]);
        assert!((n[0].1 - 0.625).abs() < 1e-12);
    }

    #[test]
    fn cold_sampling_is_greedy() {
        let cfg = DecodeConfig {
            temperature: 1e-4,
            top_p: 0.8,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            assert_eq!(decode_sample(&d1(), &cfg, &mut rng).unwrap(), decode_greedy(&d1()));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let cfg = DecodeConfig {
            top_p: 1.0,
            temperature: 1.0,
            ..Default::default()
        };
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| decode_sample(&d1(), &cfg, &mut rng).unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn nucleus_never_jumps_to_terminal_first_on_d1() {
        let cfg = DecodeConfig {
            top_p: 0.8,
            temperature: 1.0,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..500 {
            let w = sample_walk(&d1(), &cfg, &mut rng).unwrap();
            assert_ne!(w.vertices[1], 3);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = DecodeConfig {
            top_p: 0.0,
            ..Default::default()
        };
        assert!(decode_beam(&d1(), &bad, None).is_err());
        let bad = DecodeConfig {
            beam_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
