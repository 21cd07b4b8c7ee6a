//! Corpus-level BLEU-4 (single and multi-reference), pairwise BLEU for
//! diversity, token accuracy under the best assignment and length buckets.
//!
//! All scores are in `[0, 1]`. Inputs are token sequences of any hashable type.
//! Orders for which the hypotheses contain no n-grams at all (every hypothesis
//! shorter than `n`) are left out of the geometric mean, so identity scores 1
//! even on very short corpora.

use std::collections::HashMap;
use std::hash::Hash;

use serde::Serialize;

use crate::dag::Dag;
use crate::dp::loss_max;
use crate::logspace::argmax;
use crate::{Error, Result};

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuResult {
    pub score: f64,
    /// `p_1 .. p_4`; an order with no hypothesis n-grams reports 1.
    pub precisions: [f64; MAX_ORDER],
    pub bp: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
}

#[derive(Debug, Clone, Copy, Default)]
struct Stats {
    matches: [usize; MAX_ORDER],
    totals: [usize; MAX_ORDER],
    hyp_len: usize,
    ref_len: usize,
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

fn segment_stats<T: Hash + Eq, R: AsRef<[T]>>(hyp: &[T], refs: &[R]) -> Stats {
    let mut s = Stats {
        hyp_len: hyp.len(),
        ..Default::default()
    };
    // Shortest reference: the only brevity length under which adding a
    // reference can never lower the corpus score.
    s.ref_len = refs.iter().map(|r| r.as_ref().len()).min().unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(hyp, n);
        let mut max_ref: HashMap<&[T], usize> = HashMap::new();
        for r in refs {
            for (g, c) in ngram_counts(r.as_ref(), n) {
                let e = max_ref.entry(g).or_insert(0);
                *e = (*e).max(c);
            }
        }
        s.totals[n - 1] = hc.values().sum();
        s.matches[n - 1] = hc
            .iter()
            .map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0)))
            .sum();
    }
    s
}

fn finish(total: Stats, smooth: bool) -> BleuResult {
    let mut precisions = [1.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut orders = 0;
    let mut zero = false;
    for n in 0..MAX_ORDER {
        let (m, t) = (total.matches[n], total.totals[n]);
        if t == 0 {
            continue;
        }
        let p = if smooth && n > 0 {
            (m + 1) as f64 / (t + 1) as f64
        } else {
            m as f64 / t as f64
        };
        precisions[n] = p;
        orders += 1;
        if p == 0.0 {
            zero = true;
        } else {
            log_sum += p.ln();
        }
    }
    let (c, r) = (total.hyp_len, total.ref_len);
    let bp = if c == 0 {
        0.0
    } else if c > r {
        1.0
    } else {
        (1.0 - r as f64 / c as f64).exp()
    };
    let score = if zero || orders == 0 {
        0.0
    } else {
        bp * (log_sum / orders as f64).exp()
    };
    BleuResult {
        score,
        precisions,
        bp,
        hyp_len: c,
        ref_len: r,
        matches: total.matches,
        totals: total.totals,
    }
}

fn accumulate(acc: &mut Stats, s: Stats) {
    for n in 0..MAX_ORDER {
        acc.matches[n] += s.matches[n];
        acc.totals[n] += s.totals[n];
    }
    acc.hyp_len += s.hyp_len;
    acc.ref_len += s.ref_len;
}

/// Corpus BLEU-4 with one reference per hypothesis. `smooth` enables add-one
/// smoothing for orders 2..4.
pub fn bleu<T, H, R>(hyps: &[H], refs: &[R], smooth: bool) -> Result<BleuResult>
where
    T: Hash + Eq,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != refs.len() {
        return Err(Error::LengthMismatch {
            hyps: hyps.len(),
            refs: refs.len(),
        });
    }
    let mut acc = Stats::default();
    for (h, r) in hyps.iter().zip(refs) {
        accumulate(&mut acc, segment_stats(h.as_ref(), std::slice::from_ref(r)));
    }
    Ok(finish(acc, smooth))
}

/// Corpus BLEU-4 where each hypothesis is clipped against the maximum count
/// over its reference set and the brevity length is the shortest reference.
pub fn multi_ref_bleu<T, H, R>(hyps: &[H], ref_sets: &[Vec<R>], smooth: bool) -> Result<BleuResult>
where
    T: Hash + Eq,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != ref_sets.len() {
        return Err(Error::LengthMismatch {
            hyps: hyps.len(),
            refs: ref_sets.len(),
        });
    }
    let mut acc = Stats::default();
    for (i, (h, refs)) in hyps.iter().zip(ref_sets).enumerate() {
        if refs.is_empty() {
            return Err(Error::Shape(format!("segment {} has no references", i + 1)));
        }
        accumulate(&mut acc, segment_stats(h.as_ref(), refs));
    }
    Ok(finish(acc, smooth))
}

/// Mean over ordered sample indices `i != j` of the corpus BLEU of the `i`-th
/// samples scored against the `j`-th samples. Lower means more diverse.
pub fn pairwise_bleu<T, S>(sample_sets: &[Vec<S>], smooth: bool) -> Result<f64>
where
    T: Hash + Eq,
    S: AsRef<[T]>,
{
    let k = sample_sets.first().map_or(0, Vec::len);
    if let Some(bad) = sample_sets.iter().map(Vec::len).find(|&n| n < 2) {
        return Err(Error::TooFewSamples(bad));
    }
    if k < 2 {
        return Err(Error::TooFewSamples(k));
    }
    if sample_sets.iter().any(|s| s.len() != k) {
        return Err(Error::Shape("every source needs the same number of samples".into()));
    }
    let mut sum = 0.0;
    for i in 0..k {
        for j in 0..k {
            if i == j {
                continue;
            }
            let hyps: Vec<&[T]> = sample_sets.iter().map(|s| s[i].as_ref()).collect();
            let refs: Vec<&[T]> = sample_sets.iter().map(|s| s[j].as_ref()).collect();
            sum += bleu(&hyps, &refs, smooth)?.score;
        }
    }
    Ok(sum / (k * (k - 1)) as f64)
}

/// Fraction of target positions whose best-path vertex argmaxes the target token.
pub fn token_accuracy_best_assignment(dag: &Dag, target: &[usize]) -> Result<f64> {
    let path = loss_max(dag, target)?.best_path;
    let hits = path
        .vertices()
        .iter()
        .zip(target)
        .filter(|(&u, &y)| argmax(dag.log_token_row(u)) == y)
        .count();
    Ok(hits as f64 / target.len() as f64)
}

/// Fraction of hypotheses equal to one of their references.
pub fn exact_match<T, H, R>(hyps: &[H], ref_sets: &[Vec<R>]) -> Result<f64>
where
    T: PartialEq,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != ref_sets.len() {
        return Err(Error::LengthMismatch {
            hyps: hyps.len(),
            refs: ref_sets.len(),
        });
    }
    if hyps.is_empty() {
        return Ok(0.0);
    }
    let hits = hyps
        .iter()
        .zip(ref_sets)
        .filter(|(h, refs)| refs.iter().any(|r| r.as_ref() == h.as_ref()))
        .count();
    Ok(hits as f64 / hyps.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// Inclusive lower reference length.
    pub lo: usize,
    /// Exclusive upper bound; `None` is unbounded.
    pub hi: Option<usize>,
    pub count: usize,
    /// Absent for empty buckets.
    pub bleu: Option<BleuResult>,
}

/// BLEU per reference-length bucket `[edges[i], edges[i+1])`, the last bucket
/// unbounded. The bucketing length of a reference set is its shortest member.
pub fn bucketed_bleu<T, H, R>(
    hyps: &[H],
    ref_sets: &[Vec<R>],
    edges: &[usize],
    smooth: bool,
) -> Result<Vec<Bucket>>
where
    T: Hash + Eq,
    H: AsRef<[T]>,
    R: AsRef<[T]>,
{
    if hyps.len() != ref_sets.len() {
        return Err(Error::LengthMismatch {
            hyps: hyps.len(),
            refs: ref_sets.len(),
        });
    }
    if edges.is_empty() || edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("bucket edges must be non-empty and strictly increasing".into()));
    }
    let mut out = Vec::with_capacity(edges.len());
    for (b, &lo) in edges.iter().enumerate() {
        let hi = edges.get(b + 1).copied();
        let members: Vec<usize> = (0..hyps.len())
            .filter(|&i| {
                let len = ref_sets[i].iter().map(|r| r.as_ref().len()).min().unwrap_or(0);
                len >= lo && hi.is_none_or(|h| len < h)
            })
            .collect();
        let bleu = if members.is_empty() {
            None
        } else {
            let h: Vec<&[T]> = members.iter().map(|&i| hyps[i].as_ref()).collect();
            let r: Vec<Vec<&[T]>> = members
                .iter()
                .map(|&i| ref_sets[i].iter().map(AsRef::as_ref).collect())
                .collect();
            Some(multi_ref_bleu(&h, &r, smooth)?)
        };
        out.push(Bucket {
            lo,
            hi,
            count: members.len(),
            bleu,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::fixtures::{chain, d1, A, B, END};

    fn toks(s: &str) -> Vec<&str> {
        s.split_whitespace().collect()
    }

    #[test]
    fn identity_is_one() {
        let c = vec![toks("a b c d e"), toks("f g h i")];
        assert!((bleu(&c, &c, false).unwrap().score - 1.0).abs() < 1e-15);
        let short = vec![toks("a b")];
        assert!((bleu(&short, &short, false).unwrap().score - 1.0).abs() < 1e-15);
    }

    #[test]
    fn brevity_penalty_example() {
        let r = bleu(&[toks("a b c d")], &[toks("a b c d e f g h")], false).unwrap();
        assert!((r.score - (-1.0f64).exp()).abs() < 1e-12);
        assert!((r.score - 0.3679).abs() < 1e-4);
        assert_eq!(r.precisions, [1.0; 4]);
    }

    #[test]
    fn no_shared_four_gram_is_zero() {
        let r = bleu(&[toks("a b c d e")], &[toks("a b c x d e")], false).unwrap();
        assert_eq!(r.score, 0.0);
        assert!(bleu(&[toks("a b c d e")], &[toks("a b c x d e")], true).unwrap().score > 0.0);
    }

    #[test]
    fn clipping() {
        let r = bleu(&[toks("the the the the")], &[toks("the cat")], false).unwrap();
        assert_eq!(r.matches[0], 1);
        assert_eq!(r.totals[0], 4);
    }

    #[test]
    fn length_mismatch() {
        let h = vec![toks("a")];
        let r: Vec<Vec<&str>> = vec![];
        assert!(matches!(bleu(&h, &r, false), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn multi_ref_reduces_to_single() {
        let h = vec![toks("a b c d e"), toks("x y z w")];
        let r = vec![toks("a b c d f"), toks("x y z w v")];
        let sets: Vec<Vec<Vec<&str>>> = r.iter().map(|x| vec![x.clone()]).collect();
        assert_eq!(bleu(&h, &r, false).unwrap(), multi_ref_bleu(&h, &sets, false).unwrap());
    }

    #[test]
    fn multi_ref_hit_any_member() {
        let h = vec![toks("p q r s")];
        let sets = vec![vec![toks("a b c d"), toks("p q r s")]];
        let r = multi_ref_bleu(&h, &sets, false).unwrap();
        assert_eq!(r.precisions, [1.0; 4]);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn brevity_uses_shortest_reference() {
        let h = vec![toks("a b c d e")];
        let sets = vec![vec![toks("a b c d e f"), toks("a b c")]];
        assert_eq!(multi_ref_bleu(&h, &sets, false).unwrap().ref_len, 3);
    }

    #[test]
    fn pairwise() {
        let same = vec![vec![toks("a b c d"), toks("a b c d"), toks("a b c d")]];
        assert!((pairwise_bleu(&same, false).unwrap() - 1.0).abs() < 1e-15);
        let disjoint = vec![vec![toks("a b c d"), toks("e f g h")]];
        assert_eq!(pairwise_bleu(&disjoint, false).unwrap(), 0.0);
        let two = vec![vec![toks("a b c d e"), toks("a b c d")]];
        let ab = bleu(&[toks("a b c d e")], &[toks("a b c d")], false).unwrap().score;
        let ba = bleu(&[toks("a b c d")], &[toks("a b c d e")], false).unwrap().score;
        assert!((pairwise_bleu(&two, false).unwrap() - (ab + ba) / 2.0).abs() < 1e-15);
        let one = vec![vec![toks("a")]];
        assert!(matches!(pairwise_bleu(&one, false), Err(Error::TooFewSamples(1))));
    }

    #[test]
    fn token_accuracy() {
        assert_eq!(token_accuracy_best_assignment(&d1(), &[A, B, END]).unwrap(), 1.0);
        let c = chain(&[vec![0.9, 0.1], vec![0.2, 0.8], vec![0.6, 0.4]]);
        assert!((token_accuracy_best_assignment(&c, &[0, 0, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        // Every vertex argmaxes token 0; a target without token 0 scores zero.
        let c = chain(&vec![vec![0.9, 0.1]; 3]);
        assert_eq!(token_accuracy_best_assignment(&c, &[1, 1, 1]).unwrap(), 0.0);
    }

    #[test]
    fn buckets() {
        let h = vec![toks("a b"), toks("a b c d e f g h i j k l"), toks("q r s t u")];
        let sets: Vec<Vec<Vec<&str>>> = h.iter().map(|x| vec![x.clone()]).collect();
        let all = bucketed_bleu(&h, &sets, &[0], false).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].bleu.as_ref().unwrap(), &multi_ref_bleu(&h, &sets, false).unwrap());
        let b = bucketed_bleu(&h, &sets, &[0, 10, 20], false).unwrap();
        assert_eq!(b.iter().map(|x| x.count).sum::<usize>(), 3);
        assert_eq!(b[0].count, 2);
        assert!(b[2].bleu.is_none());
        assert!(bucketed_bleu(&h, &sets, &[10, 5], false).is_err());
    }

    #[test]
    fn exact_match_counts_any_reference() {
        let h = vec![toks("a b"), toks("c")];
        let sets = vec![vec![toks("x"), toks("a b")], vec![toks("d")]];
        assert_eq!(exact_match(&h, &sets).unwrap(), 0.5);
    }
}
