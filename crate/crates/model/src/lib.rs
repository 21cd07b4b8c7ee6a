//! A small transformer encoder with a directed acyclic decoder, trained by
//! exact path marginalization with glancing, on top of `dagnat-core`.
//!
//! Everything runs in double precision on the CPU with a tiny reverse-mode
//! autodiff tape; the network is sized for desk-scale experiments.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod optim;
pub mod params;
pub mod tape;
pub mod train;

pub use config::{ModelConfig, TrainConfig};
pub use network::Model;
pub use tape::Objective;
pub use train::Trainer;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Core(#[from] dagnat_core::Error),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("length error: {0}")]
    Length(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("checkpoint format mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
