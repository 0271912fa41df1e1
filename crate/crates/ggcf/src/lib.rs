//! Dual-geometry graph collaborative filtering.
//!
//! User and item embeddings are propagated through a simplified graph convolution
//! simultaneously in Euclidean space and on the Lorentz hyperboloid. After each
//! propagation layer the two geometries exchange information through a distance-gated
//! interaction step; per-layer features are fused (arithmetic mean in Euclidean space,
//! Lorentzian centroid on the hyperboloid) and user-item affinity is scored with a
//! combination of the Euclidean and Lorentzian scalar products.
//!
//! Modules:
//! - [`lorentz`]: hyperboloid-model primitives (exp/log maps, transport, centroid).
//! - [`graph`]: interaction data, ingestion, splits, the bipartite graph, sampling.
//! - [`model`]: parameters, dual propagation, cross-geometry interaction, scoring.
//! - [`train`]: BPR loss, exact gradients, Adam, the training loop.
//! - [`eval`]: full-catalog ranking metrics (recall@k, ndcg@k).
//! - [`checkpoint`]: binary model snapshots with bitwise round-trip.
//! - [`datagen`]: deterministic synthetic interaction corpora.
//! - [`cli`]: the `ggcf` command-line interface.

pub mod checkpoint;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod graph;
pub mod eval;
pub mod lorentz;
pub mod model;
pub mod train;

pub use error::{GgcfError, Result};
