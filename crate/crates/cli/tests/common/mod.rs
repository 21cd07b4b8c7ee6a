#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn dagnat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dagnat"))
        .args(args)
        .env_remove("DAGNAT_SEED")
        .output()
        .expect("binary runs")
}

/// Run and return stdout, or the exit status and stderr as the error.
pub fn try_run(args: &[&str]) -> Result<String, String> {
    let out = dagnat(args);
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!(
            "dagnat {} failed ({}): {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

pub fn run(args: &[&str]) -> String {
    try_run(args).unwrap_or_else(|e| panic!("{e}"))
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

pub const TINY_TASK: &[&str] = &["--train-sources", "40", "--eval-sources", "6", "--min-len", "3", "--max-len", "5"];

pub const TINY_MODEL: &[&str] = &[
    "--model-dim", "16", "--num-heads", "2", "--encoder-layers", "1", "--decoder-layers", "1",
    "--ffn-dim", "32", "--batch-tokens", "60", "--warmup-steps", "5", "--peak-lr", "3e-3",
    "--eval-every", "10",
];

pub fn gen_data(dir: &Path, seed: &str) -> Result<(), String> {
    let mut args = vec!["gen-data", "--out", p(dir), "--seed", seed];
    args.extend_from_slice(TINY_TASK);
    try_run(&args).map(drop)
}

pub fn train(data: &Path, out: &Path, steps: &str, seed: &str, extra: &[&str]) -> Result<(), String> {
    let train = data.join("train.tsv");
    let valid = data.join("eval.tsv");
    let vocab = data.join("vocab.txt");
    let mut args = vec![
        "train", "--train", p(&train), "--valid", p(&valid), "--vocab", p(&vocab), "--out", p(out),
        "--steps", steps, "--seed", seed,
    ];
    args.extend_from_slice(TINY_MODEL);
    args.extend_from_slice(extra);
    try_run(&args).map(drop)
}

/// Every command once with a fixed seed; returns the primary artifacts.
pub fn pipeline(dir: &Path, seed: &str) -> Result<Vec<PathBuf>, String> {
    let data = dir.join("data");
    let model = dir.join("model");
    gen_data(&data, seed)?;
    train(&data, &model, "20", seed, &[])?;
    let ck = model.join("model.ckpt");
    let vocab = data.join("vocab.txt");
    let src = data.join("eval.src");
    let refs = data.join("eval.tsv");
    let lm = dir.join("lm.txt");
    try_run(&["lm-train", "--train", p(&data.join("train.tsv")), "--vocab", p(&vocab), "--order", "3", "--out", p(&lm)])?;
    let mut artifacts = vec![
        data.join("train.tsv"),
        data.join("eval.tsv"),
        data.join("eval.src"),
        vocab.clone(),
        ck.clone(),
        model.join("metrics.csv"),
        lm.clone(),
    ];
    let base = ["--checkpoint", p(&ck), "--vocab", p(&vocab), "--input", p(&src), "--seed", seed];
    for (name, extra) in [
        ("greedy", vec!["--decode", "greedy"]),
        ("lookahead", vec!["--decode", "lookahead"]),
        ("beam", vec!["--decode", "beam", "--beam-size", "20"]),
        ("beam_lm", vec!["--decode", "beam", "--beam-size", "20", "--lm", p(&lm)]),
        ("sample", vec!["--decode", "sample", "--k", "4"]),
    ] {
        let out = dir.join(format!("{name}.hyp"));
        let mut args = vec!["decode", "--out", p(&out)];
        args.extend_from_slice(&base);
        args.extend(extra.iter().copied());
        try_run(&args)?;
        artifacts.push(out);
    }
    let report = dir.join("eval.json");
    try_run(&[
        "eval", "--hyps", p(&dir.join("sample.hyp")), "--refs", p(&refs), "--k", "4",
        "--checkpoint", p(&ck), "--vocab", p(&vocab), "--out", p(&report),
    ])?;
    artifacts.push(report);
    let graph = dir.join("graph");
    try_run(&["export-dag", "--checkpoint", p(&ck), "--vocab", p(&vocab), "--source", "1 2 3", "--out", p(&graph)])?;
    artifacts.push(dir.join("graph.json"));
    artifacts.push(dir.join("graph.dot"));
    let stats = dir.join("stats.json");
    try_run(&["stats", "--checkpoint", p(&ck), "--vocab", p(&vocab), "--input", p(&src), "--out", p(&stats)])?;
    artifacts.push(stats);
    Ok(artifacts)
}

/// Artifacts of two pipeline runs that differ, by file name.
pub fn differing(a: &[PathBuf], b: &[PathBuf]) -> Vec<String> {
    a.iter()
        .zip(b)
        .filter(|(x, y)| std::fs::read(x).ok() != std::fs::read(y).ok())
        .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
        .collect()
}
