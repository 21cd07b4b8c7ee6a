//! `export-dag` and `stats`.

use anyhow::{bail, Result};
use serde::Serialize;

use crate::args::{ExportDagArgs, StatsArgs};
use crate::util::{emit, load_model, read_sources, write_atomic};

pub fn export_dag(a: &ExportDagArgs) -> Result<()> {
    for (name, v) in [("min_passing", a.min_passing), ("edge_mass", a.edge_mass)] {
        if !(0.0..=1.0).contains(&v) {
            bail!("{name} must lie in [0, 1], got {v}");
        }
    }
    let (ck, vocab) = load_model(&a.checkpoint, &a.vocab)?;
    let src = vocab.encode(&a.source, 1)?;
    let dag = ck.model.dag_for_source(&src, None)?;
    let pruned = dag.prune_for_export(a.min_passing, a.edge_mass);
    let tokens = vocab.tokens();
    let mut json = serde_json::to_string_pretty(&pruned.to_json(&dag, tokens, a.top_k))?;
    json.push('\n');
    let with_ext = |ext: &str| {
        let mut p = a.out.as_os_str().to_owned();
        p.push(ext);
        std::path::PathBuf::from(p)
    };
    write_atomic(&with_ext(".json"), json)?;
    write_atomic(&with_ext(".dot"), pruned.to_dot(&dag, tokens, a.top_k))
}

#[derive(Debug, Serialize)]
pub struct Categories {
    /// Passing probability above 0.5.
    pub high_passing: f64,
    /// Passing below 0.5 but a confident token (max probability above 0.5).
    pub low_passing_confident: f64,
    /// Passing below 0.2 and no confident token (max probability below 0.2).
    pub low_passing_uncertain: f64,
}

#[derive(Debug, Serialize)]
pub struct StatsReport {
    pub sources: usize,
    pub vertices: usize,
    pub passing_floor: f64,
    pub edge_mass: f64,
    pub merge_same_token: bool,
    pub mean_passing: f64,
    pub mean_max_token_prob: f64,
    /// `out_degree_hist[k]`: vertices above the passing floor needing `k` edges.
    pub out_degree_hist: Vec<usize>,
    pub mean_out_degree: f64,
    pub categories: Categories,
}

pub fn stats(a: &StatsArgs) -> Result<()> {
    for (name, v) in [("passing_floor", a.passing_floor), ("edge_mass", a.edge_mass)] {
        if !(0.0..=1.0).contains(&v) {
            bail!("{name} must lie in [0, 1], got {v}");
        }
    }
    let (ck, vocab) = load_model(&a.checkpoint, &a.vocab)?;
    let sources = read_sources(&a.input, &vocab)?;
    if sources.is_empty() {
        bail!("{} contains no sources", a.input.display());
    }
    let mut hist: Vec<usize> = Vec::new();
    let (mut vertices, mut passing_sum, mut max_sum) = (0usize, 0.0, 0.0);
    let (mut high, mut confident, mut uncertain) = (0usize, 0usize, 0usize);
    for src in &sources {
        let dag = ck.model.dag_for_source(src, None)?;
        let s = dag.dag_stats(a.passing_floor, a.edge_mass, a.merge_same_token);
        if hist.len() < s.out_degree_hist.len() {
            hist.resize(s.out_degree_hist.len(), 0);
        }
        for (k, c) in s.out_degree_hist.iter().enumerate() {
            hist[k] += c;
        }
        for (&p, &m) in s.passing_probs.iter().zip(&s.max_token_probs) {
            vertices += 1;
            passing_sum += p;
            max_sum += m;
            if p > 0.5 {
                high += 1;
            } else if p < 0.5 && m > 0.5 {
                confident += 1;
            }
            if p < 0.2 && m < 0.2 {
                uncertain += 1;
            }
        }
    }
    let counted: usize = hist.iter().sum();
    let weighted: usize = hist.iter().enumerate().map(|(k, c)| k * c).sum();
    let frac = |c: usize| c as f64 / vertices as f64;
    let report = StatsReport {
        sources: sources.len(),
        vertices,
        passing_floor: a.passing_floor,
        edge_mass: a.edge_mass,
        merge_same_token: a.merge_same_token,
        mean_passing: passing_sum / vertices as f64,
        mean_max_token_prob: max_sum / vertices as f64,
        out_degree_hist: hist,
        mean_out_degree: if counted > 0 { weighted as f64 / counted as f64 } else { 0.0 },
        categories: Categories {
            high_passing: frac(high),
            low_passing_confident: frac(confident),
            low_passing_uncertain: frac(uncertain),
        },
    };
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(a.out.as_deref(), &json)
}
