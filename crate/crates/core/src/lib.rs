//! Supervised hierarchical graph clustering for associating object detections
//! across overlapping camera views.
//!
//! The pipeline builds a directed affinity graph over one timestamp's
//! detections, encodes it with a small message-passing network, predicts
//! which edges join detections of the same identity, and decodes the
//! predictions into a forest whose connected components are clusters. The
//! procedure repeats over aggregated supernodes for a fixed number of levels.
//!
//! Scene-level work (synthetic generation, ground-truth construction,
//! per-graph gradients, clustering) runs on rayon when the `parallel` feature
//! is enabled and falls back to plain iteration otherwise. Results are
//! bit-identical in both modes.

pub mod affinity;
pub mod dataio;
pub mod decode;
mod error;
pub mod exec;
pub mod geometry;
pub mod groundtruth;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use exec::Execution;
