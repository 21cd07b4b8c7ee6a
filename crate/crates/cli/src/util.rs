//! File helpers shared by the commands.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dagnat_core::data::Vocab;
use dagnat_model::checkpoint::{load_checkpoint, Checkpoint};

/// Write through a temporary sibling and rename, so a failed run never leaves
/// a partial artifact behind.
pub fn write_atomic(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    std::fs::write(&tmp, bytes).with_context(|| format!("writing {}", path.display()))?;
    std::fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_vocab(path: &Path) -> Result<Vocab> {
    Vocab::load(path).with_context(|| format!("loading vocabulary {}", path.display()))
}

/// Checkpoint and vocabulary that agree on the vocabulary size.
pub fn load_model(checkpoint: &Path, path: &Path) -> Result<(Checkpoint, Vocab)> {
    let ck = load_checkpoint(checkpoint).with_context(|| format!("loading checkpoint {}", checkpoint.display()))?;
    let vocab = load_vocab(path)?;
    if ck.model.cfg.vocab_size != vocab.len() {
        bail!(
            "{} expects {} vocabulary entries but {} has {}",
            checkpoint.display(),
            ck.model.cfg.vocab_size,
            path.display(),
            vocab.len()
        );
    }
    Ok((ck, vocab))
}

/// Encoded non-empty source lines.
pub fn read_sources(path: &Path, vocab: &Vocab) -> Result<Vec<Vec<usize>>> {
    let text = read_text(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            bail!("{}: line {} is empty", path.display(), i + 1);
        }
        out.push(vocab.encode(line, i + 1).with_context(|| format!("in {}", path.display()))?);
    }
    Ok(out)
}

pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
