//! Probability model, exact dynamic programming and decoding algorithms for
//! directed acyclic graph (DAG) decoders used in non-autoregressive
//! translation.
//!
//! A [`Dag`] holds `L` vertices, each with a token distribution, and a strictly
//! upper-triangular row-stochastic transition matrix. Every path from vertex 1
//! to vertex `L` emits one candidate sentence. Everything in this crate is a
//! pure function over immutable inputs.
//!
//! Vertex indices are 0-based in code and 1-based in error messages.

pub mod dag;
pub mod data;
pub mod decoding;
pub mod dp;
mod error;
pub mod glancing;
pub mod lm;
pub mod logspace;
pub mod metrics;

pub use dag::{Dag, DagStats, Path, PrunedDag};
pub use error::{Error, Result};
