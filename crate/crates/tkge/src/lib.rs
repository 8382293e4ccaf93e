//! Temporal knowledge-graph completion with time-evolving entity embeddings
//! on products of constant-curvature Riemannian manifolds.
//!
//! The crate covers the full pipeline:
//!
//! - [`geometry`] / [`product`]: stereographic-model kernels for hyperbolic,
//!   Euclidean and spherical components, and products of them.
//! - [`data`]: TSV quadruple loading, vocabularies, reciprocal augmentation,
//!   negative sampling.
//! - [`model`]: the scoring function with per-entity velocity (or periodic)
//!   dynamics and per-predicate diagonal transforms and translations.
//! - [`tape`] / [`grad`]: exact reverse-mode gradients of the binary
//!   cross-entropy training loss, with a finite-difference checker.
//! - [`train`]: Riemannian SGD, early stopping on validation MRR, and a
//!   small grid search over product signatures.
//! - [`curvature`]: graph-based sectional-curvature estimation used to pick
//!   signatures before training.
//! - [`eval`]: filtered ranking metrics (MRR, Hits@k).
//! - [`checkpoint`] / [`config`]: on-disk formats shared with the CLI.
//!
//! Determinism is a first-class contract: all randomness flows through
//! counter-based ChaCha streams derived from one seed (see [`rng`]), float
//! accumulations have fixed order, and parallel sections only ever merge
//! results in index order.

pub mod checkpoint;
pub mod config;
pub mod curvature;
pub mod data;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod grad;
pub mod model;
pub mod product;
pub mod rng;
pub mod scalar;
pub mod synth;
pub mod tape;
pub mod train;

pub use error::{Error, Result};
