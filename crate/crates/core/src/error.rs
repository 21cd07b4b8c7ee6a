use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{matrix} row {row} sums to {sum}, expected 1")]
    Normalization {
        matrix: &'static str,
        /// 1-based row index.
        row: usize,
        sum: f64,
    },

    #[error("transition {from} -> {to} carries mass {mass} but only forward edges are allowed")]
    Structure { from: usize, to: usize, mass: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("target length {target} does not fit graph size {graph}")]
    Length { target: usize, graph: usize },

    #[error("token index {token} out of range for vocabulary of size {vocab}")]
    Vocab { token: usize, vocab: usize },

    #[error("target is unreachable under the graph (likelihood is zero)")]
    Degenerate,

    #[error("invalid path: {0}")]
    InvalidPath(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("corpus is empty")]
    EmptyCorpus,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("line {line}: unknown token {token:?}")]
    UnknownToken { line: usize, token: String },

    #[error("hypothesis count {hyps} does not match reference count {refs}")]
    LengthMismatch { hyps: usize, refs: usize },

    #[error("need at least 2 samples per source, got {0}")]
    TooFewSamples(usize),

    #[error("language model file: {0}")]
    LmFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
