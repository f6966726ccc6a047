//! graphdoor: a desk-scale laboratory for multi-category backdoor attacks on
//! graph neural networks.
//!
//! The crate covers the full loop: synthetic dataset generation, victim
//! training (GCN / GraphSAGE / GAT), a jointly optimized multi-category
//! trigger pool, similarity-gated trigger attachment, pruning and
//! outlier-detection defenses, and a deterministic evaluation harness.
//!
//! Start with the runnable programs in `examples/`; `examples/end_to_end.rs`
//! walks the whole pipeline on a small synthetic graph.

pub mod attacher;
pub mod bilevel;
pub mod cli;
pub mod config;
pub mod defense;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod metrics;
pub mod models;
pub mod pipeline;
pub mod pool;
pub mod report;
pub mod sampling;
pub mod sba;
pub mod synth;

pub use error::{Error, Result};
