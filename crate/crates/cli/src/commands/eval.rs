//! `eval`: corpus metrics as a JSON report.

use std::collections::HashSet;

use anyhow::{bail, Context, Result};
use dagnat_core::data::{parse_ref_groups, BOS, EOS};
use dagnat_core::metrics::{bleu, bucketed_bleu, exact_match, multi_ref_bleu, pairwise_bleu, token_accuracy_best_assignment, Bucket};
use serde::Serialize;

use crate::args::EvalArgs;
use crate::util::{emit, load_model, read_text};

#[derive(Debug, Serialize)]
pub struct SampleReport {
    pub k: usize,
    /// Mean number of distinct samples that are valid references.
    pub mean_distinct_valid: f64,
    /// Fraction of sources with at least two distinct valid samples.
    pub two_or_more_valid: f64,
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub sources: usize,
    /// Corpus BLEU of the first hypothesis per source against the first reference.
    pub bleu: f64,
    pub precisions: [f64; 4],
    pub bp: f64,
    pub multi_ref: f64,
    pub exact_match: f64,
    pub buckets: Vec<Bucket>,
    /// Mean BLEU between distinct samples of a source; needs `k >= 2`.
    pub pairwise: Option<f64>,
    pub samples: Option<SampleReport>,
    pub token_accuracy: Option<f64>,
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let groups = parse_ref_groups(&read_text(&a.refs)?).with_context(|| format!("in {}", a.refs.display()))?;
    let hyp_text = read_text(&a.hyps)?;
    let lines: Vec<Vec<&str>> = hyp_text.lines().map(|l| l.split_whitespace().collect()).collect();
    if a.k == 0 || lines.len() != groups.len() * a.k {
        bail!(
            "{} has {} lines; expected {} sources x k={}",
            a.hyps.display(),
            lines.len(),
            groups.len(),
            a.k
        );
    }
    let per_source: Vec<&[Vec<&str>]> = lines.chunks(a.k).collect();
    let primary: Vec<&Vec<&str>> = per_source.iter().map(|s| &s[0]).collect();
    let ref_sets: Vec<Vec<&Vec<String>>> = groups.iter().map(|g| g.references.iter().collect()).collect();
    let ref_sets: Vec<Vec<Vec<&str>>> = ref_sets
        .iter()
        .map(|rs| rs.iter().map(|r| r.iter().map(String::as_str).collect()).collect())
        .collect();
    let first_refs: Vec<&Vec<&str>> = ref_sets.iter().map(|rs| &rs[0]).collect();

    let single = bleu(&primary, &first_refs, a.smooth)?;
    let multi = multi_ref_bleu(&primary, &ref_sets, a.smooth)?;
    let (pairwise, samples) = if a.k >= 2 {
        let by_index: Vec<Vec<&Vec<&str>>> = (0..a.k).map(|j| per_source.iter().map(|s| &s[j]).collect()).collect();
        let mut distinct_sum = 0usize;
        let mut two_plus = 0usize;
        for (samples, refs) in per_source.iter().zip(&ref_sets) {
            let valid: HashSet<&Vec<&str>> = samples.iter().filter(|s| refs.contains(s)).collect();
            distinct_sum += valid.len();
            two_plus += usize::from(valid.len() >= 2);
        }
        let n = groups.len() as f64;
        (
            Some(pairwise_bleu(&by_index, a.smooth)?),
            Some(SampleReport {
                k: a.k,
                mean_distinct_valid: distinct_sum as f64 / n,
                two_or_more_valid: two_plus as f64 / n,
            }),
        )
    } else {
        (None, None)
    };
    let token_accuracy = match (&a.checkpoint, &a.vocab) {
        (Some(ck), Some(v)) => {
            let (ck, vocab) = load_model(ck, v)?;
            let mut sum = 0.0;
            let mut n = 0usize;
            for g in &groups {
                let src = vocab.encode(&g.source.join(" "), 0)?;
                let dag = ck.model.dag_for_source(&src, None)?;
                for r in &g.references {
                    let mut target = vec![BOS];
                    target.extend(vocab.encode(&r.join(" "), 0)?);
                    target.push(EOS);
                    sum += token_accuracy_best_assignment(&dag, &target)?;
                    n += 1;
                }
            }
            Some(sum / n as f64)
        }
        _ => None,
    };
    let report = EvalReport {
        sources: groups.len(),
        bleu: single.score,
        precisions: single.precisions,
        bp: single.bp,
        multi_ref: multi.score,
        exact_match: exact_match(&primary, &ref_sets)?,
        buckets: bucketed_bleu(&primary, &ref_sets, &a.bucket_edges, a.smooth)?,
        pairwise,
        samples,
        token_accuracy,
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(a.out.as_deref(), &json)
}
